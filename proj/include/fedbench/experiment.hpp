#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fedbench/config.hpp"
#include "fedbench/federated.hpp"
#include "fedbench/gbdt.hpp"
#include "fedbench/metrics.hpp"
#include "fedbench/pipeline.hpp"
#include "fedbench/synthetic.hpp"

namespace fedbench::experiment {

namespace detail {

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v * 100.0);
  return buf;
}

inline double seconds_since(
    std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synthesize

inline std::filesystem::path run_synthesize(const ExperimentConfig& config,
                                            std::ostream& log = std::cout) {
  std::filesystem::create_directories(config.out_dir);
  const RawTable table = synth::generate_synthetic(config.synthetic);
  const auto path = std::filesystem::path(config.out_dir) / "synthetic.csv";
  write_csv(path, table, config.delimiter);
  log << "synthesize: wrote " << table.rows.size() << " rows ("
      << config.synthetic.schools << " schools) to " << path.string() << "\n";
  return path;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessResult {
  std::size_t rows_in = 0;
  std::size_t rows_kept = 0;
  std::size_t width = 0;
  double threshold = 0.0;
  std::size_t class_counts[2] = {0, 0};
  std::filesystem::path output;
};

// Two-pass streaming pipeline: the first pass collects target scores and
// per-column category counts from rows with a usable target; the second
// pass imputes, encodes and writes. Only per-column statistics and the
// score vector are held in memory, so input size is not a constraint.
inline PreprocessResult run_preprocess(const ExperimentConfig& config,
                                       std::ostream& log = std::cout) {
  config.pipeline.validate();
  std::filesystem::create_directories(config.out_dir);
  std::filesystem::path input = config.raw_file();
  if (config.use_synthetic) input = run_synthesize(config, log);

  const PipelineSpec& spec = config.pipeline;
  PreprocessResult result;

  std::vector<std::size_t> feature_cols;
  std::size_t school_col = 0, target_col = 0;
  std::vector<std::map<std::string, std::size_t>> counts(
      spec.feature_columns.size());
  std::vector<double> scores;

  auto resolve_columns = [&](const std::vector<std::string>& header) {
    RawTable probe;
    probe.column_names = header;
    school_col = probe.column_index(spec.school_id_column);
    target_col = probe.column_index(spec.target_column);
    feature_cols.clear();
    for (const auto& name : spec.feature_columns)
      feature_cols.push_back(probe.column_index(name));
  };

  auto cell_missing = [&spec](const std::string& field) {
    return field.empty() || spec.missing_markers.count(field) > 0;
  };

  resolve_columns(read_csv_header(input, config.delimiter));

  // Pass 1: scores and category inventory.
  for_each_csv_row(
      input, config.delimiter,
      [&](std::size_t row_number, const std::vector<std::string>& fields) {
        ++result.rows_in;
        if (cell_missing(fields[target_col])) return;
        const auto score = parse_double(fields[target_col]);
        if (!score)
          throw DataError("column '" + spec.target_column + "' at row " +
                          std::to_string(row_number) +
                          " is not a decimal number");
        if (!parse_int(fields[school_col]))
          throw DataError("column '" + spec.school_id_column + "' at row " +
                          std::to_string(row_number) + " is not an integer");
        scores.push_back(*score);
        for (std::size_t f = 0; f < feature_cols.size(); ++f) {
          const std::string& v = fields[feature_cols[f]];
          if (!cell_missing(v)) ++counts[f][v];
        }
      });

  if (scores.empty()) throw DataError("no scores");
  result.rows_kept = scores.size();
  result.threshold = median(scores);

  // Mode per column (ties to the smallest category) and the fixed layout.
  CategoryLayout layout;
  std::vector<std::string> modes(counts.size());
  std::size_t offset = 0;
  for (std::size_t f = 0; f < counts.size(); ++f) {
    if (counts[f].empty())
      throw DataError("cannot impute: column '" + spec.feature_columns[f] +
                      "' has no values");
    std::size_t best = 0;
    for (const auto& [category, count] : counts[f]) {
      if (count > best) {
        best = count;
        modes[f] = category;
      }
    }
    CategoryLayout::Block block;
    block.column = spec.feature_columns[f];
    block.offset = offset;
    for (const auto& [category, count] : counts[f])
      block.categories.push_back(category);
    offset += block.categories.size();
    layout.blocks.push_back(std::move(block));
  }
  layout.width = offset;
  result.width = offset;

  // Pass 2: impute, encode, write.
  result.output = config.processed_file();
  std::filesystem::create_directories(result.output.parent_path());
  std::ofstream out(result.output, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + result.output.string());
  const char d = config.delimiter;
  out << "ID_ESCOLA" << d << "ALVO_CLASSIFICACAO";
  for (const auto& name : layout.encoded_names()) out << d << name;
  out << '\n';

  std::string buffer;
  std::size_t buffered = 0;
  std::vector<std::string> values(feature_cols.size());
  std::vector<std::uint8_t> encoded(layout.width);
  for_each_csv_row(
      input, config.delimiter,
      [&](std::size_t, const std::vector<std::string>& fields) {
        if (cell_missing(fields[target_col])) return;
        const double score = *parse_double(fields[target_col]);
        const std::uint8_t label = score > result.threshold ? 1 : 0;
        ++result.class_counts[label];
        for (std::size_t f = 0; f < feature_cols.size(); ++f) {
          const std::string& v = fields[feature_cols[f]];
          values[f] = cell_missing(v) ? modes[f] : v;
        }
        layout.encode(values, encoded);
        buffer += fields[school_col];
        buffer += d;
        buffer += label ? '1' : '0';
        for (std::uint8_t bit : encoded) {
          buffer += d;
          buffer += bit ? '1' : '0';
        }
        buffer += '\n';
        if (++buffered >= config.chunk_rows) {
          out << buffer;
          buffer.clear();
          buffered = 0;
        }
      });
  out << buffer;
  out.close();

  log << "preprocess: " << result.rows_in << " rows in, " << result.rows_kept
      << " kept, encoded width " << result.width << ", threshold "
      << fmt17(result.threshold) << "\n";
  log << "preprocess: class balance " << result.class_counts[0] << "/"
      << result.class_counts[1] << " ("
      << detail::pct(static_cast<double>(result.class_counts[0]) /
                     static_cast<double>(result.rows_kept))
      << " class 0)\n";
  log << "preprocess: wrote " << result.output.string() << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// shared arms

inline Dataset load_processed(const ExperimentConfig& config) {
  const auto path = config.processed_file();
  if (!std::filesystem::exists(path))
    throw DataError("processed dataset not found: " + path.string() +
                    " (run preprocess first)");
  return read_processed_csv(path, config.delimiter);
}

struct CentralizedResult {
  metrics::RoundMetrics test_metrics;
  metrics::RocCurve roc;
  std::vector<std::pair<std::string, double>> importance;
};

inline void write_metrics_row(const std::filesystem::path& path,
                              std::size_t round,
                              const metrics::RoundMetrics& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "round,accuracy,precision,recall,f1,loss,participating_client_ids\n";
  out << round << ',' << fmt17(m.accuracy) << ',' << fmt17(m.precision) << ','
      << fmt17(m.recall) << ',' << fmt17(m.f1) << ',' << fmt17(m.loss)
      << ",\n";
}

inline CentralizedResult centralized_arm(const SplitDataset& split,
                                         const ExperimentConfig& config,
                                         std::ostream& log) {
  const auto model = gbdt::fit(split.train, config.boost);
  const auto pred = gbdt::predict(model, split.test.features);
  CentralizedResult result;
  result.test_metrics =
      metrics::evaluate(pred.probabilities, split.test.labels);
  result.roc = metrics::roc_auc(pred.probabilities, split.test.labels);
  result.importance = gbdt::feature_importance(model);

  const std::filesystem::path dir(config.out_dir);
  gbdt::save_ensemble(dir / "centralized_model.txt", model);
  write_metrics_row(dir / "centralized_metrics.csv", 0, result.test_metrics);
  metrics::write_roc_csv(dir / "centralized_roc.csv", result.roc);
  {
    std::ofstream out(dir / "centralized_importance.csv", std::ios::binary);
    out << "feature,total_gain\n";
    for (const auto& [name, gain] : result.importance)
      out << name << ',' << fmt17(gain) << '\n';
  }

  log << "centralized: accuracy " << detail::pct(result.test_metrics.accuracy)
      << ", precision " << detail::pct(result.test_metrics.precision)
      << ", recall " << detail::pct(result.test_metrics.recall) << ", f1 "
      << detail::pct(result.test_metrics.f1) << ", auc "
      << detail::pct(result.roc.auc) << "\n";
  log << "centralized: top features";
  const std::size_t top = std::min<std::size_t>(15, result.importance.size());
  for (std::size_t i = 0; i < top; ++i)
    log << (i ? ", " : " ") << result.importance[i].first;
  log << "\n";
  return result;
}

struct FederatedResult {
  std::vector<fed::RoundRecord> history;
  metrics::RocCurve final_roc;
  std::size_t peak_round = 0;
  double peak_accuracy = 0.0;
};

inline FederatedResult federated_arm(const SplitDataset& split,
                                     const ExperimentConfig& config,
                                     std::ostream& log) {
  const auto partitions = partition_by_school(
      split.train, config.min_rows, config.sample_schools,
      config.partition_seed);
  const auto history =
      fed::run_federation(partitions, split.test, config.federation);

  FederatedResult result;
  result.history = history;
  const std::filesystem::path dir(config.out_dir);
  fed::write_round_history(dir / "round_history.csv", history);

  if (!history.empty()) {
    const auto& final_model = history.back().global_model;
    const auto scores = nn::predict(final_model, split.test.features);
    result.final_roc = metrics::roc_auc(scores, split.test.labels);
    metrics::write_roc_csv(dir / "federated_roc.csv", result.final_roc);
    nn::save_model(dir / "federated_model.txt", final_model);
    const auto [round, acc] = fed::best_round(history);
    result.peak_round = round;
    result.peak_accuracy = acc;
    if (config.save_round_checkpoints)
      for (const auto& r : history)
        nn::save_model(dir / ("federated_round_" + std::to_string(r.round) +
                              ".txt"),
                       r.global_model);

    log << "federated: " << partitions.size() << " clients, "
        << history.size() << " rounds\n";
    log << "federated: peak accuracy " << detail::pct(acc) << " in round "
        << round << ", final accuracy "
        << detail::pct(history.back().metrics.accuracy) << ", final auc "
        << detail::pct(result.final_roc.auc) << "\n";
  }
  return result;
}

inline CentralizedResult run_centralized(const ExperimentConfig& config,
                                         std::ostream& log = std::cout) {
  std::filesystem::create_directories(config.out_dir);
  const Dataset data = load_processed(config);
  const SplitDataset split =
      stratified_split(data, config.test_fraction, config.split_seed);
  return centralized_arm(split, config, log);
}

inline FederatedResult run_federated(const ExperimentConfig& config,
                                     std::ostream& log = std::cout) {
  std::filesystem::create_directories(config.out_dir);
  const Dataset data = load_processed(config);
  const SplitDataset split =
      stratified_split(data, config.test_fraction, config.split_seed);
  return federated_arm(split, config, log);
}

// ---------------------------------------------------------------------------
// compare

struct ComparisonReport {
  metrics::RoundMetrics centralized;
  double centralized_auc = 0.0;
  metrics::RoundMetrics federated_final;
  double federated_auc = 0.0;
  std::size_t peak_round = 0;
  double peak_accuracy = 0.0;
  double gap_pp = 0.0;  // centralized accuracy - federated peak, in points
  double runtime_centralized_s = 0.0;  // informational; kept out of the CSVs
  double runtime_federated_s = 0.0;
};

// Both arms run on the identical split; the test sets are row-identical.
inline ComparisonReport run_compare(const ExperimentConfig& config,
                                    std::ostream& log = std::cout) {
  std::filesystem::create_directories(config.out_dir);
  const Dataset data = load_processed(config);
  const SplitDataset split =
      stratified_split(data, config.test_fraction, config.split_seed);

  ComparisonReport report;
  auto t0 = std::chrono::steady_clock::now();
  const auto central = centralized_arm(split, config, log);
  report.runtime_centralized_s = detail::seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const auto federated = federated_arm(split, config, log);
  report.runtime_federated_s = detail::seconds_since(t0);

  report.centralized = central.test_metrics;
  report.centralized_auc = central.roc.auc;
  if (!federated.history.empty())
    report.federated_final = federated.history.back().metrics;
  report.federated_auc = federated.final_roc.auc;
  report.peak_round = federated.peak_round;
  report.peak_accuracy = federated.peak_accuracy;
  report.gap_pp =
      100.0 * (report.centralized.accuracy - report.peak_accuracy);

  const auto path = std::filesystem::path(config.out_dir) / "comparison.csv";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "key,value\n";
  auto kv = [&out](const std::string& k, const std::string& v) {
    out << k << ',' << v << '\n';
  };
  kv("centralized_accuracy", fmt17(report.centralized.accuracy));
  kv("centralized_precision", fmt17(report.centralized.precision));
  kv("centralized_recall", fmt17(report.centralized.recall));
  kv("centralized_f1", fmt17(report.centralized.f1));
  kv("centralized_loss", fmt17(report.centralized.loss));
  kv("centralized_auc", fmt17(report.centralized_auc));
  kv("federated_final_accuracy", fmt17(report.federated_final.accuracy));
  kv("federated_final_precision", fmt17(report.federated_final.precision));
  kv("federated_final_recall", fmt17(report.federated_final.recall));
  kv("federated_final_f1", fmt17(report.federated_final.f1));
  kv("federated_final_loss", fmt17(report.federated_final.loss));
  kv("federated_auc", fmt17(report.federated_auc));
  kv("federated_peak_round", std::to_string(report.peak_round));
  kv("federated_peak_accuracy", fmt17(report.peak_accuracy));
  kv("gap_pp", fmt17(report.gap_pp));
  out.close();

  char line[160];
  std::snprintf(line, sizeof line,
                "compare: centralized %s vs federated peak %s (round %zu), "
                "gap %.2f pp\n",
                detail::pct(report.centralized.accuracy).c_str(),
                detail::pct(report.peak_accuracy).c_str(), report.peak_round,
                report.gap_pp);
  log << line;
  std::snprintf(line, sizeof line,
                "compare: runtimes (informational, not in CSVs): centralized "
                "%.2fs, federated %.2fs\n",
                report.runtime_centralized_s, report.runtime_federated_s);
  log << line;
  return report;
}

}  // namespace fedbench::experiment
