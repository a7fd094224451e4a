#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedbench/csv.hpp"
#include "fedbench/matrix.hpp"
#include "fedbench/rng.hpp"

namespace fedbench {

// Which columns of the raw microdata feed the model. The default mirrors a
// typical socioeconomic questionnaire selection; the pipeline itself is
// agnostic to the exact set.
struct PipelineSpec {
  std::vector<std::string> feature_columns;
  std::string school_id_column = "ID_ESCOLA";
  std::string target_column = "PROFICIENCIA_MT";
  std::set<std::string> missing_markers = {".", "*"};

  static PipelineSpec defaults() {
    PipelineSpec spec;
    spec.feature_columns = {
        "TX_RESP_Q01", "TX_RESP_Q02", "TX_RESP_Q03",  "TX_RESP_Q04",
        "TX_RESP_Q05a", "TX_RESP_Q06", "TX_RESP_Q07", "TX_RESP_Q08",
        "TX_RESP_Q09", "TX_RESP_Q10",  "TX_RESP_Q11"};
    return spec;
  }

  void validate() const {
    if (feature_columns.empty())
      throw ConfigError("pipeline: feature_columns must be non-empty");
    std::set<std::string> seen;
    for (const auto& c : feature_columns) {
      if (c == school_id_column || c == target_column)
        throw ConfigError("pipeline: feature column '" + c +
                          "' collides with id/target column");
      if (!seen.insert(c).second)
        throw ConfigError("pipeline: duplicate feature column '" + c + "'");
    }
  }

  bool is_missing(const Cell& cell) const {
    return !cell.has_value() || missing_markers.count(*cell) > 0;
  }
};

// Model-ready table: one-hot features, binary labels, school ids.
struct Dataset {
  BinaryMatrix features;
  std::vector<std::uint8_t> labels;
  std::vector<std::int64_t> school_ids;
  std::vector<std::string> feature_names;  // "<column>_<category>"

  std::size_t rows() const { return labels.size(); }
  std::size_t width() const { return features.cols(); }
};

struct SplitDataset {
  Dataset train;
  Dataset test;
  std::uint64_t split_seed = 0;
};

// One school's private slice. n_k is the sample count the server is allowed
// to see alongside the trained parameters.
struct ClientPartition {
  std::int64_t client_id = 0;
  Dataset data;

  std::size_t n_k() const { return data.rows(); }
};

inline Dataset select_rows(const Dataset& data,
                           const std::vector<std::size_t>& indices) {
  Dataset out;
  out.feature_names = data.feature_names;
  out.features = BinaryMatrix(indices.size(), data.width());
  out.labels.reserve(indices.size());
  out.school_ids.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    auto src = data.features.row(r);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(data.labels[r]);
    out.school_ids.push_back(data.school_ids[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target binarization

inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("no scores");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

struct BinarizedTarget {
  std::vector<std::uint8_t> labels;
  double threshold = 0.0;
};

// Class 1 above the median, class 0 at or below it. Ties at the threshold
// all land in class 0, which can leave class 0 slightly larger on tie-heavy
// score distributions.
inline BinarizedTarget binarize_target(const std::vector<double>& scores) {
  if (scores.empty()) throw DataError("no scores");
  BinarizedTarget out;
  out.threshold = median(scores);
  out.labels.reserve(scores.size());
  for (double s : scores) out.labels.push_back(s > out.threshold ? 1 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning and imputation

inline RawTable drop_missing_target(const RawTable& table,
                                    const PipelineSpec& spec) {
  const std::size_t target = table.column_index(spec.target_column);
  RawTable out;
  out.column_names = table.column_names;
  for (const auto& row : table.rows)
    if (!spec.is_missing(row[target])) out.rows.push_back(row);
  return out;
}

// Most frequent category wins; ties break to the lexicographically smallest
// so the result does not depend on row order.
inline std::vector<std::string> impute_mode(
    const std::vector<std::optional<std::string>>& column) {
  std::map<std::string, std::size_t> counts;
  for (const auto& cell : column)
    if (cell) ++counts[*cell];
  if (counts.empty()) throw DataError("cannot impute: column has no values");
  std::string mode;
  std::size_t best = 0;
  for (const auto& [category, count] : counts) {
    if (count > best) {  // strict: first max in ascending key order wins ties
      best = count;
      mode = category;
    }
  }
  std::vector<std::string> out;
  out.reserve(column.size());
  for (const auto& cell : column) out.push_back(cell ? *cell : mode);
  return out;
}

// Applies impute_mode to every configured feature column, resolving marker
// tokens to missing first. Non-missing cells are never altered.
inline RawTable impute_features(const RawTable& table,
                                const PipelineSpec& spec) {
  RawTable out = table;
  for (const auto& col_name : spec.feature_columns) {
    const std::size_t c = table.column_index(col_name);
    std::vector<std::optional<std::string>> column;
    column.reserve(table.rows.size());
    for (const auto& row : table.rows)
      column.push_back(spec.is_missing(row[c]) ? std::nullopt : row[c]);
    std::vector<std::string> filled = impute_mode(column);
    for (std::size_t r = 0; r < out.rows.size(); ++r)
      out.rows[r][c] = std::move(filled[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-hot encoding

// Category layout discovered from data: one block of lexicographically
// ordered categories per feature column. Fixes the encoded column order for
// every later row, including rows with categories unseen at discovery time
// (those encode to an all-zero block).
struct CategoryLayout {
  struct Block {
    std::string column;
    std::vector<std::string> categories;  // sorted
    std::size_t offset = 0;
  };
  std::vector<Block> blocks;
  std::size_t width = 0;

  std::vector<std::string> encoded_names() const {
    std::vector<std::string> names;
    names.reserve(width);
    for (const auto& b : blocks)
      for (const auto& cat : b.categories) names.push_back(b.column + "_" + cat);
    return names;
  }

  // feature_values must follow the block order.
  void encode(std::span<const std::string> feature_values,
              std::span<std::uint8_t> out) const {
    std::fill(out.begin(), out.end(), 0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& block = blocks[b];
      auto it = std::lower_bound(block.categories.begin(),
                                 block.categories.end(), feature_values[b]);
      if (it != block.categories.end() && *it == feature_values[b])
        out[block.offset + static_cast<std::size_t>(
                               it - block.categories.begin())] = 1;
    }
  }

  // Inverse of encode for exactly-one-hot rows; empty string for an
  // all-zero block.
  std::vector<std::string> decode(std::span<const std::uint8_t> row) const {
    std::vector<std::string> values(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& block = blocks[b];
      for (std::size_t k = 0; k < block.categories.size(); ++k)
        if (row[block.offset + k]) values[b] = block.categories[k];
    }
    return values;
  }
};

inline CategoryLayout discover_layout(const RawTable& table,
                                      const PipelineSpec& spec) {
  CategoryLayout layout;
  std::size_t offset = 0;
  for (const auto& col_name : spec.feature_columns) {
    const std::size_t c = table.column_index(col_name);
    std::set<std::string> categories;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const Cell& cell = table.rows[r][c];
      if (spec.is_missing(cell))
        throw DataError("missing value in column '" + col_name + "' at row " +
                        std::to_string(r + 1) + " (impute first)");
      categories.insert(*cell);
    }
    CategoryLayout::Block block;
    block.column = col_name;
    block.categories.assign(categories.begin(), categories.end());
    block.offset = offset;
    offset += block.categories.size();
    layout.blocks.push_back(std::move(block));
  }
  layout.width = offset;
  return layout;
}

// Expects the target column already binarized to 0/1 and feature cells
// imputed. School ids must parse as integers.
inline Dataset one_hot_encode(const RawTable& table, const PipelineSpec& spec) {
  const std::size_t school_col = table.column_index(spec.school_id_column);
  const std::size_t target_col = table.column_index(spec.target_column);
  const CategoryLayout layout = discover_layout(table, spec);

  std::vector<std::size_t> feature_cols;
  for (const auto& name : spec.feature_columns)
    feature_cols.push_back(table.column_index(name));

  Dataset data;
  data.feature_names = layout.encoded_names();
  data.features = BinaryMatrix(table.rows.size(), layout.width);
  data.labels.reserve(table.rows.size());
  data.school_ids.reserve(table.rows.size());

  std::vector<std::string> values(feature_cols.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const Row& row = table.rows[r];
    const auto school = row[school_col] ? parse_int(*row[school_col])
                                        : std::nullopt;
    if (!school)
      throw DataError("column '" + spec.school_id_column + "' at row " +
                      std::to_string(r + 1) + " is not an integer");
    const auto label = row[target_col] ? parse_int(*row[target_col])
                                       : std::nullopt;
    if (!label || (*label != 0 && *label != 1))
      throw DataError("column '" + spec.target_column + "' at row " +
                      std::to_string(r + 1) +
                      " is not a binary label (binarize first)");
    for (std::size_t f = 0; f < feature_cols.size(); ++f)
      values[f] = *row[feature_cols[f]];
    layout.encode(values, data.features.row(r));
    data.school_ids.push_back(*school);
    data.labels.push_back(static_cast<std::uint8_t>(*label));
  }
  return data;
}

// Full in-memory pipeline: drop missing targets, binarize, impute, encode.
struct ProcessedTable {
  Dataset data;
  double threshold = 0.0;
  std::size_t rows_in = 0;
  std::size_t rows_kept = 0;
};

inline ProcessedTable process_table(const RawTable& raw,
                                    const PipelineSpec& spec) {
  spec.validate();
  ProcessedTable out;
  out.rows_in = raw.rows.size();
  RawTable kept = drop_missing_target(raw, spec);
  out.rows_kept = kept.rows.size();

  const std::size_t target_col = kept.column_index(spec.target_column);
  std::vector<double> scores;
  scores.reserve(kept.rows.size());
  for (std::size_t r = 0; r < kept.rows.size(); ++r) {
    const auto v = parse_double(*kept.rows[r][target_col]);
    if (!v)
      throw DataError("column '" + spec.target_column + "' at row " +
                      std::to_string(r + 1) + " is not a decimal number");
    scores.push_back(*v);
  }
  const BinarizedTarget target = binarize_target(scores);
  out.threshold = target.threshold;
  for (std::size_t r = 0; r < kept.rows.size(); ++r)
    kept.rows[r][target_col] = target.labels[r] ? "1" : "0";

  kept = impute_features(kept, spec);
  out.data = one_hot_encode(kept, spec);
  return out;
}

// ---------------------------------------------------------------------------
// Stratified splitting

// Per-class test counts: round(class_count * fraction), half away from zero.
inline std::vector<std::size_t> stratified_test_counts(
    const std::vector<std::size_t>& class_counts, double test_fraction) {
  std::vector<std::size_t> out;
  out.reserve(class_counts.size());
  for (std::size_t c : class_counts)
    out.push_back(static_cast<std::size_t>(
        std::llround(static_cast<double>(c) * test_fraction)));
  return out;
}

inline SplitDataset stratified_split(const Dataset& data, double test_fraction,
                                     std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("stratified_split: test_fraction must be in (0,1)");
  std::vector<std::size_t> by_class[2];
  for (std::size_t r = 0; r < data.rows(); ++r)
    by_class[data.labels[r] ? 1 : 0].push_back(r);
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 2)
      throw DataError("stratified_split: class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) +
                      " rows (need at least 2)");

  const auto test_counts = stratified_test_counts(
      {by_class[0].size(), by_class[1].size()}, test_fraction);
  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < 2; ++c) {
    auto idx = by_class[c];
    auto rng = make_engine(derive_seed(seed, static_cast<std::uint64_t>(c)));
    deterministic_shuffle(idx, rng);
    const std::size_t n_test = test_counts[c];
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + n_test);
    train_idx.insert(train_idx.end(), idx.begin() + n_test, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  SplitDataset split;
  split.train = select_rows(data, train_idx);
  split.test = select_rows(data, test_idx);
  split.split_seed = seed;
  return split;
}

// ---------------------------------------------------------------------------
// School partitioning

inline std::vector<ClientPartition> partition_by_school(const Dataset& data,
                                                        std::size_t min_rows,
                                                        std::size_t sample_size,
                                                        std::uint64_t seed) {
  if (min_rows < 1)
    throw std::invalid_argument("partition_by_school: min_rows must be >= 1");
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < data.rows(); ++r)
    groups[data.school_ids[r]].push_back(r);

  std::vector<std::int64_t> eligible;
  for (const auto& [school, rows] : groups)
    if (rows.size() >= min_rows) eligible.push_back(school);

  if (eligible.size() < sample_size)
    throw DataError("only " + std::to_string(eligible.size()) +
                    " schools have at least " + std::to_string(min_rows) +
                    " rows; requested sample of " +
                    std::to_string(sample_size));

  auto rng = make_engine(derive_seed(seed));
  std::vector<std::int64_t> selected =
      sample_without_replacement(eligible, sample_size, rng);
  std::sort(selected.begin(), selected.end());

  std::vector<ClientPartition> partitions;
  partitions.reserve(selected.size());
  for (std::int64_t school : selected) {
    ClientPartition part;
    part.client_id = school;
    part.data = select_rows(data, groups[school]);
    partitions.push_back(std::move(part));
  }
  return partitions;
}

// ---------------------------------------------------------------------------
// Processed-dataset file format: ID_ESCOLA, ALVO_CLASSIFICACAO, then the
// encoded feature columns in layout order.

inline void write_processed_csv(const std::filesystem::path& path,
                                const Dataset& data, char delimiter = ';') {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "ID_ESCOLA" << delimiter << "ALVO_CLASSIFICACAO";
  for (const auto& name : data.feature_names) out << delimiter << name;
  out << '\n';
  for (std::size_t r = 0; r < data.rows(); ++r) {
    out << data.school_ids[r] << delimiter << (data.labels[r] ? '1' : '0');
    for (std::uint8_t bit : data.features.row(r))
      out << delimiter << (bit ? '1' : '0');
    out << '\n';
  }
}

inline Dataset read_processed_csv(const std::filesystem::path& path,
                                  char delimiter = ';') {
  Dataset data;
  std::vector<std::uint8_t> bits;
  std::size_t width = 0;
  auto header = for_each_csv_row(
      path, delimiter,
      [&](std::size_t row_number, const std::vector<std::string>& fields) {
        const auto school = parse_int(fields[0]);
        if (!school)
          throw DataError("ID_ESCOLA at row " + std::to_string(row_number) +
                          " is not an integer");
        const auto label = parse_int(fields[1]);
        if (!label || (*label != 0 && *label != 1))
          throw DataError("ALVO_CLASSIFICACAO at row " +
                          std::to_string(row_number) + " is not 0/1");
        data.school_ids.push_back(*school);
        data.labels.push_back(static_cast<std::uint8_t>(*label));
        for (std::size_t c = 2; c < fields.size(); ++c) {
          const auto bit = parse_int(fields[c]);
          if (!bit || (*bit != 0 && *bit != 1))
            throw DataError("feature cell at row " +
                            std::to_string(row_number) + ", column " +
                            std::to_string(c + 1) + " is not 0/1");
          bits.push_back(static_cast<std::uint8_t>(*bit));
        }
      });
  if (header.size() < 2 || header[0] != "ID_ESCOLA" ||
      header[1] != "ALVO_CLASSIFICACAO")
    throw DataError("not a processed dataset file: " + path.string());
  width = header.size() - 2;
  data.feature_names.assign(header.begin() + 2, header.end());
  data.features = BinaryMatrix(data.labels.size(), width);
  for (std::size_t r = 0; r < data.labels.size(); ++r)
    std::copy(bits.begin() + r * width, bits.begin() + (r + 1) * width,
              data.features.row(r).begin());
  return data;
}

}  // namespace fedbench
