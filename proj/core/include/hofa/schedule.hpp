#pragma once

// ParamSchedule: the registry of desk-scale constants standing in for the
// asymptotic ones. Every key has a documented default; config files are plain
// `key = value` lines and the CLI overrides those.

#include <map>
#include <string>

namespace hofa {

struct ScheduleEntry {
  double value;
  std::string doc;
};

class ParamSchedule {
 public:
  static ParamSchedule defaults();
  static const std::map<std::string, ScheduleEntry>& registry();

  double get(const std::string& key) const;
  int geti(const std::string& key) const;
  void set(const std::string& key, double value);  // unknown keys rejected

  // `key = value` lines; '#' starts a comment; blank lines ignored
  void load_line(const std::string& line);
  void load_file(const std::string& path);
  std::string dump() const;  // all keys with doc comments, diffable

 private:
  std::map<std::string, double> values_;
};

// t = ceil(c * eps^-2 * ln(4/delta)), the Lemma-4.1 style sample count
long long chernoff_samples(double eps, double delta, double c = 8.0);

}  // namespace hofa
