#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedbench/common.hpp"
#include "fedbench/csv.hpp"
#include "fedbench/federated.hpp"
#include "fedbench/gbdt.hpp"
#include "fedbench/pipeline.hpp"
#include "fedbench/synthetic.hpp"

namespace fedbench::experiment {

// Minimal sectioned key/value file. Full-line comments start with '#' or
// ';'; values keep interior whitespace but are trimmed at the ends.
class IniFile {
 public:
  static IniFile parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    IniFile ini;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#' || trimmed[0] == ';') continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed section header");
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        ini.sections_[section];
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": empty key");
      ini.sections_[section][key] = value;
    }
    return ini;
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    if (!has(section, key)) return fallback;
    const auto v = parse_double(get_str(section, key, ""));
    if (!v) throw ConfigError("[" + section + "] " + key + ": not a number");
    return *v;
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const auto v = parse_int(get_str(section, key, ""));
    if (!v) throw ConfigError("[" + section + "] " + key + ": not an integer");
    return *v;
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const {
    const auto v = get_int(section, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("[" + section + "] " + key + ": must be >= 0");
    return static_cast<std::uint64_t>(v);
  }

  std::size_t get_size(const std::string& section, const std::string& key,
                       std::size_t fallback) const {
    return static_cast<std::size_t>(
        get_u64(section, key, static_cast<std::uint64_t>(fallback)));
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_str(section, key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("[" + section + "] " + key + ": expected true/false");
  }

  const std::map<std::string, std::map<std::string, std::string>>& sections()
      const {
    return sections_;
  }

  static std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

inline std::vector<std::string> split_list(const std::string& s,
                                           char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(IniFile::trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!IniFile::trim(cur).empty() || !out.empty())
    out.push_back(IniFile::trim(cur));
  return out;
}

// Everything one experiment run needs, resolved from a config file plus
// command-line overrides. Seeds are all explicit; nothing is derived from
// the clock, so reruns reproduce outputs byte for byte.
struct ExperimentConfig {
  // data source
  std::string input_path;     // raw microdata CSV
  bool use_synthetic = true;  // generate the input instead
  synth::SyntheticSpec synthetic;
  char delimiter = ';';
  std::string processed_path;  // defaults to <out_dir>/processed.csv
  std::size_t chunk_rows = 65536;

  PipelineSpec pipeline = PipelineSpec::defaults();

  double test_fraction = 0.2;
  std::uint64_t split_seed = 42;

  fed::FederationConfig federation;
  std::size_t min_rows = 20;
  std::size_t sample_schools = 50;
  std::uint64_t partition_seed = 7;
  bool save_round_checkpoints = false;

  gbdt::BoostConfig boost;

  std::string out_dir = "out";

  std::filesystem::path processed_file() const {
    if (!processed_path.empty()) return processed_path;
    return std::filesystem::path(out_dir) / "processed.csv";
  }

  std::filesystem::path raw_file() const {
    if (use_synthetic)
      return std::filesystem::path(out_dir) / "synthetic.csv";
    return input_path;
  }

  void validate() const {
    if (use_synthetic && !input_path.empty())
      throw ConfigError("set either [data] input or [data] synthetic, not both");
    if (!use_synthetic && input_path.empty())
      throw ConfigError("no data source: set [data] input or [data] synthetic");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw ConfigError("[split] test_fraction must be in (0,1)");
    if (min_rows < 1) throw ConfigError("[federation] min_rows must be >= 1");
    if (chunk_rows < 1) throw ConfigError("[data] chunk_rows must be >= 1");
    pipeline.validate();
    federation.validate();
    boost.validate();
    if (use_synthetic) synthetic.validate();
  }

  // Applies the --seed override: every stage seed becomes `seed`.
  void override_all_seeds(std::uint64_t seed) {
    synthetic.seed = seed;
    split_seed = seed;
    partition_seed = seed;
    federation.seed = seed;
    federation.train.seed = seed;
    boost.seed = seed;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    const IniFile ini = IniFile::parse_file(path);
    check_known_keys(ini, path);
    ExperimentConfig c;

    c.input_path = ini.get_str("data", "input", "");
    c.use_synthetic = ini.get_bool("data", "synthetic", c.input_path.empty());
    const std::string delim = ini.get_str("data", "delimiter", ";");
    if (delim.size() != 1)
      throw ConfigError("[data] delimiter must be a single character");
    c.delimiter = delim[0];
    c.processed_path = ini.get_str("data", "processed", "");
    c.chunk_rows = ini.get_size("data", "chunk_rows", c.chunk_rows);

    c.synthetic.schools = ini.get_size("synthetic", "schools", 50);
    c.synthetic.rows_min = ini.get_size("synthetic", "rows_min", 35);
    c.synthetic.rows_max = ini.get_size("synthetic", "rows_max", 45);
    c.synthetic.heterogeneity =
        ini.get_double("synthetic", "heterogeneity", 0.5);
    c.synthetic.noise_sd = ini.get_double("synthetic", "noise_sd", 0.5);
    c.synthetic.missing_rate = ini.get_double("synthetic", "missing_rate", 0.0);
    c.synthetic.seed = ini.get_u64("synthetic", "seed", 42);

    if (ini.has("pipeline", "feature_columns"))
      c.pipeline.feature_columns =
          split_list(ini.get_str("pipeline", "feature_columns", ""));
    c.pipeline.school_id_column =
        ini.get_str("pipeline", "school_id_column", "ID_ESCOLA");
    c.pipeline.target_column =
        ini.get_str("pipeline", "target_column", "PROFICIENCIA_MT");
    if (ini.has("pipeline", "missing_markers")) {
      c.pipeline.missing_markers.clear();
      for (const auto& m :
           split_list(ini.get_str("pipeline", "missing_markers", "")))
        c.pipeline.missing_markers.insert(m);
    }

    c.test_fraction = ini.get_double("split", "test_fraction", 0.2);
    c.split_seed = ini.get_u64("split", "seed", 42);

    c.federation.num_rounds = ini.get_size("federation", "rounds", 20);
    c.federation.fraction_fit =
        ini.get_double("federation", "fraction_fit", 0.2);
    c.federation.min_fit_clients =
        ini.get_size("federation", "min_fit_clients", 10);
    c.federation.proximal_mu = ini.get_double("federation", "mu", 0.1);
    c.min_rows = ini.get_size("federation", "min_rows", 20);
    c.sample_schools = ini.get_size("federation", "sample_schools", 50);
    c.partition_seed = ini.get_u64("federation", "partition_seed", 7);
    c.federation.seed = ini.get_u64("federation", "seed", 42);
    const std::string algorithm =
        ini.get_str("federation", "algorithm", "fedprox");
    if (algorithm == "fedavg")
      c.federation.fedavg_mode = true;
    else if (algorithm != "fedprox")
      throw ConfigError("[federation] algorithm must be fedprox or fedavg");
    c.federation.parallel_clients =
        ini.get_bool("federation", "parallel_clients", false);
    c.save_round_checkpoints =
        ini.get_bool("federation", "save_round_checkpoints", false);
    if (ini.has("federation", "hidden_dims")) {
      c.federation.hidden_dims.clear();
      for (const auto& d :
           split_list(ini.get_str("federation", "hidden_dims", ""))) {
        const auto v = parse_int(d);
        if (!v || *v <= 0)
          throw ConfigError("[federation] hidden_dims: bad dimension '" + d +
                            "'");
        c.federation.hidden_dims.push_back(static_cast<std::size_t>(*v));
      }
    }

    c.federation.train.learning_rate =
        ini.get_double("train", "learning_rate", 0.01);
    c.federation.train.batch_size = ini.get_size("train", "batch_size", 32);
    c.federation.train.local_epochs =
        ini.get_size("train", "local_epochs", 10);
    c.federation.train.seed = ini.get_u64("train", "seed", 42);

    c.boost.n_trees = ini.get_size("boost", "n_trees", 100);
    c.boost.max_depth = ini.get_size("boost", "max_depth", 6);
    c.boost.eta = ini.get_double("boost", "eta", 0.3);
    c.boost.lambda = ini.get_double("boost", "lambda", 1.0);
    c.boost.gamma = ini.get_double("boost", "gamma", 0.0);
    c.boost.min_child_weight =
        ini.get_double("boost", "min_child_weight", 1.0);
    c.boost.seed = ini.get_u64("boost", "seed", 42);

    c.out_dir = ini.get_str("output", "dir", "out");
    return c;
  }

 private:
  static void check_known_keys(const IniFile& ini,
                               const std::filesystem::path& path) {
    static const std::map<std::string, std::set<std::string>> known = {
        {"data", {"input", "synthetic", "delimiter", "processed", "chunk_rows"}},
        {"synthetic",
         {"schools", "rows_min", "rows_max", "heterogeneity", "noise_sd",
          "missing_rate", "seed"}},
        {"pipeline",
         {"feature_columns", "school_id_column", "target_column",
          "missing_markers"}},
        {"split", {"test_fraction", "seed"}},
        {"federation",
         {"rounds", "fraction_fit", "min_fit_clients", "mu", "min_rows",
          "sample_schools", "partition_seed", "seed", "algorithm",
          "parallel_clients", "hidden_dims", "save_round_checkpoints"}},
        {"train", {"learning_rate", "batch_size", "local_epochs", "seed"}},
        {"boost",
         {"n_trees", "max_depth", "eta", "lambda", "gamma",
          "min_child_weight", "seed"}},
        {"output", {"dir"}},
    };
    for (const auto& [section, keys] : ini.sections()) {
      auto it = known.find(section);
      if (it == known.end())
        throw ConfigError(path.string() + ": unknown section [" + section +
                          "]");
      for (const auto& [key, value] : keys)
        if (!it->second.count(key))
          throw ConfigError(path.string() + ": unknown key '" + key +
                            "' in section [" + section + "]");
    }
  }
};

}  // namespace fedbench::experiment
