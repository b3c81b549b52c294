#include "fbftl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace fbftl {

std::vector<Eigen::Index> Dataset::class_counts() const {
  std::vector<Eigen::Index> counts(class_names.size(), 0);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= counts.size())
      throw std::invalid_argument("Dataset: label out of range");
    ++counts[static_cast<std::size_t>(label)];
  }
  return counts;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

double parse_number(const std::string& s, const std::string& path, std::size_t line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw config_error(path + ":" + std::to_string(line_no) + ": bad numeric field '" + s + "'");
  return v;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& expected_classes) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open dataset: " + path);

  std::string line;
  if (!std::getline(in, line)) throw config_error(path + ": empty file");
  const std::size_t num_cols = split_fields(trim(line)).size();
  if (num_cols < 2) throw config_error(path + ": need at least one feature column and a label");
  const std::size_t num_features = num_cols - 1;

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_fields(t);
    if (fields.size() != num_cols)
      throw config_error(path + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(num_cols) + " fields, got " +
                         std::to_string(fields.size()));
    std::vector<double> row(num_features);
    for (std::size_t c = 0; c < num_features; ++c)
      row[c] = parse_number(trim(fields[c]), path, line_no);
    rows.push_back(std::move(row));
    raw_labels.push_back(trim(fields[num_features]));
  }
  if (rows.empty()) throw config_error(path + ": no data rows");

  std::vector<std::string> names;
  if (!expected_classes.empty()) {
    names = expected_classes;
  } else {
    std::set<std::string> unique(raw_labels.begin(), raw_labels.end());
    names.assign(unique.begin(), unique.end());
  }
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i);

  Dataset data;
  data.class_names = names;
  data.features.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(num_features));
  data.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < num_features; ++c)
      data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    const auto it = index.find(raw_labels[r]);
    if (it == index.end())
      throw config_error(path + ": unexpected class '" + raw_labels[r] + "'");
    data.labels[r] = it->second;
  }
  return data;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& X) {
  if (X.rows() == 0) throw std::invalid_argument("Standardizer: empty matrix");
  Standardizer s;
  s.mean = X.colwise().mean();
  Eigen::VectorXd var = (X.rowwise() - s.mean.transpose()).array().square().colwise().mean();
  s.scale = var.array().sqrt();
  for (Eigen::Index i = 0; i < s.scale.size(); ++i)
    if (s.scale(i) == 0.0) s.scale(i) = 1.0;
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
  if (X.cols() != mean.size())
    throw std::invalid_argument("Standardizer: dimension mismatch");
  return (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Dataset subset(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  out.class_names = data.class_names;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < 0 || r >= data.size()) throw std::invalid_argument("subset: row out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(r);
    out.labels[i] = data.labels[static_cast<std::size_t>(r)];
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             Rng& rng) {
  if (test_fraction < 0.0 || test_fraction > 1.0)
    throw std::invalid_argument("split_train_test: fraction must be in [0, 1]");
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  const std::size_t n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(data.size())));
  std::vector<int> test_rows(order.begin(), order.begin() + static_cast<long>(n_test));
  std::vector<int> train_rows(order.begin() + static_cast<long>(n_test), order.end());
  return {subset(data, train_rows), subset(data, test_rows)};
}

std::vector<std::vector<int>> partition_clients(const Dataset& data, int num_clients,
                                                int samples_per_client, Rng& rng) {
  if (num_clients <= 0 || samples_per_client <= 0)
    throw std::invalid_argument("partition_clients: counts must be positive");
  const std::int64_t need =
      static_cast<std::int64_t>(num_clients) * static_cast<std::int64_t>(samples_per_client);
  if (need > data.size())
    throw config_error("partition_clients: need " + std::to_string(need) +
                       " samples but dataset has " + std::to_string(data.size()));
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::vector<std::vector<int>> clients(static_cast<std::size_t>(num_clients));
  std::size_t at = 0;
  for (auto& client : clients) {
    client.assign(order.begin() + static_cast<long>(at),
                  order.begin() + static_cast<long>(at + samples_per_client));
    at += static_cast<std::size_t>(samples_per_client);
  }
  return clients;
}

Dataset rebalance(const Dataset& data, RebalanceStrategy strategy, Rng& rng,
                  const std::map<int, int>& merge_map) {
  if (data.size() == 0) throw std::invalid_argument("rebalance: empty dataset");
  if (strategy == RebalanceStrategy::merge) {
    for (const auto& [from, to] : merge_map) {
      if (from < 0 || from >= data.num_classes() || to < 0 || to >= data.num_classes())
        throw config_error("rebalance: merge_map index out of range");
      if (merge_map.count(to))
        throw config_error("rebalance: merge target is itself merged away");
    }
    std::vector<int> remap(static_cast<std::size_t>(data.num_classes()));
    std::vector<std::string> names;
    int next = 0;
    for (int c = 0; c < data.num_classes(); ++c) {
      if (merge_map.count(c)) continue;
      remap[static_cast<std::size_t>(c)] = next++;
      names.push_back(data.class_names[static_cast<std::size_t>(c)]);
    }
    for (const auto& [from, to] : merge_map)
      remap[static_cast<std::size_t>(from)] = remap[static_cast<std::size_t>(to)];
    Dataset out;
    out.features = data.features;
    out.class_names = std::move(names);
    out.labels.resize(data.labels.size());
    for (std::size_t i = 0; i < data.labels.size(); ++i)
      out.labels[i] = remap[static_cast<std::size_t>(data.labels[i])];
    return out;
  }

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(data.num_classes()));
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(static_cast<int>(i));
  std::size_t limit = 0;
  if (strategy == RebalanceStrategy::oversample) {
    for (const auto& c : by_class) limit = std::max(limit, c.size());
  } else {
    limit = data.labels.size();
    for (const auto& c : by_class)
      if (!c.empty()) limit = std::min(limit, c.size());
  }
  std::vector<int> rows;
  for (auto& members : by_class) {
    if (members.empty()) continue;
    if (strategy == RebalanceStrategy::oversample) {
      rows.insert(rows.end(), members.begin(), members.end());
      for (std::size_t i = members.size(); i < limit; ++i)
        rows.push_back(members[static_cast<std::size_t>(rng.below(members.size()))]);
    } else {
      rng.shuffle(members);
      rows.insert(rows.end(), members.begin(), members.begin() + static_cast<long>(limit));
    }
  }
  return subset(data, rows);
}

Dataset synth_gaussian_mixture(int classes, int dim, int per_class, double separation,
                               Rng& rng) {
  if (classes <= 0 || dim <= 0) throw std::invalid_argument("synth: classes and dim must be positive");
  if (per_class <= 0) throw config_error("synth: empty dataset (per_class must be positive)");
  Dataset data;
  data.features.resize(static_cast<Eigen::Index>(classes) * per_class, dim);
  data.labels.resize(static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class));
  data.class_names.reserve(static_cast<std::size_t>(classes));
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    data.class_names.push_back("class" + std::to_string(c));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    mean(c % dim) = separation * (1.0 + static_cast<double>(c / dim));
    for (int s = 0; s < per_class; ++s, ++row) {
      for (Eigen::Index d = 0; d < dim; ++d)
        data.features(row, d) = mean(d) + rng.normal();
      data.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return data;
}

TransferSplit make_transfer_split(const Dataset& data, const std::vector<int>& source_classes,
                                  const std::vector<int>& target_classes) {
  if (source_classes.empty() || target_classes.empty())
    throw config_error("transfer split: both class lists must be non-empty");
  std::set<int> seen;
  for (int c : source_classes) {
    if (c < 0 || c >= data.num_classes())
      throw config_error("transfer split: class index out of range");
    if (!seen.insert(c).second) throw config_error("transfer split: duplicate class");
  }
  for (int c : target_classes) {
    if (c < 0 || c >= data.num_classes())
      throw config_error("transfer split: class index out of range");
    if (!seen.insert(c).second)
      throw config_error("transfer split: source and target classes must be disjoint");
  }

  auto build = [&data](const std::vector<int>& classes) {
    std::map<int, int> remap;
    Dataset out;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      remap[classes[i]] = static_cast<int>(i);
      out.class_names.push_back(data.class_names[static_cast<std::size_t>(classes[i])]);
    }
    std::vector<int> rows;
    for (std::size_t i = 0; i < data.labels.size(); ++i)
      if (remap.count(data.labels[i])) rows.push_back(static_cast<int>(i));
    Dataset picked = subset(data, rows);
    out.features = std::move(picked.features);
    out.labels.resize(picked.labels.size());
    for (std::size_t i = 0; i < picked.labels.size(); ++i)
      out.labels[i] = remap.at(picked.labels[i]);
    return out;
  };

  return {build(source_classes), build(target_classes)};
}

}  // namespace fbftl
