#include "clusterseq/synthgen.hpp"

#include "clusterseq/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace clusterseq {

namespace {

std::string padded(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, n);
  return buf;
}

void validate(const PlantedSpec& spec, const std::vector<PlantedCluster>& clusters) {
  if (spec.weights.empty()) fail(ErrorCode::spec, "planted spec needs at least one cluster");
  double total = 0.0;
  for (double w : spec.weights) {
    if (!(w >= 0.0)) fail(ErrorCode::spec, "cluster weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::spec, "cluster weights must sum to 1");
  if (spec.users < 1 || spec.items < 1) fail(ErrorCode::spec, "need at least one user and one item");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) fail(ErrorCode::spec, "bad length range");
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0)) fail(ErrorCode::spec, "noise must lie in [0, 1]");
  if (clusters.size() != spec.weights.size()) fail(ErrorCode::spec, "one chain per cluster weight required");
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& cl = clusters[c];
    const auto n = static_cast<Eigen::Index>(cl.items.size());
    const std::string which = "cluster " + std::to_string(c);
    if (n == 0) fail(ErrorCode::spec, which + " has no items");
    if (cl.transitions.rows() != n || cl.transitions.cols() != n) {
      fail(ErrorCode::spec, which + " transition matrix is not " + std::to_string(n) + "x" + std::to_string(n));
    }
    for (ItemId i : cl.items) {
      if (i >= static_cast<ItemId>(spec.items)) fail(ErrorCode::spec, which + " uses an item outside the vocabulary");
    }
    if ((cl.transitions.array() < 0.0).any() || !cl.transitions.allFinite()) {
      fail(ErrorCode::spec, which + " transition matrix has negative or non-finite entries");
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      if (std::abs(cl.transitions.row(r).sum() - 1.0) > 1e-9) {
        fail(ErrorCode::spec, which + " transition row " + std::to_string(r) + " is not stochastic");
      }
    }
  }
}

std::vector<PlantedCluster> default_clusters(const PlantedSpec& spec, Rng& rng) {
  const int k = spec.cluster_count();
  if (spec.items < k) fail(ErrorCode::spec, "fewer items than clusters");
  std::vector<PlantedCluster> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const int lo = spec.items * c / k;
    const int hi = spec.items * (c + 1) / k;
    auto& cl = out[static_cast<std::size_t>(c)];
    for (int i = lo; i < hi; ++i) cl.items.push_back(static_cast<ItemId>(i));
    const auto n = static_cast<Eigen::Index>(cl.items.size());
    const Eigen::Index fan = std::clamp<Eigen::Index>(spec.successors, 1, n);
    cl.transitions = Matrix::Zero(n, n);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> weight(0.1, 1.0);
    for (Eigen::Index r = 0; r < n; ++r) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index s = 0; s < fan; ++s) cl.transitions(r, order[static_cast<std::size_t>(s)]) = weight(rng);
      cl.transitions.row(r) /= cl.transitions.row(r).sum();
    }
  }
  return out;
}

std::size_t sample_row(const Matrix& m, Eigen::Index r, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    x -= m(r, c);
    if (x < 0.0) return static_cast<std::size_t>(c);
  }
  // rounding: fall back to the last positive entry
  for (Eigen::Index c = m.cols(); c-- > 0;) {
    if (m(r, c) > 0.0) return static_cast<std::size_t>(c);
  }
  return 0;
}

}  // namespace

PlantedCorpus generate(const PlantedSpec& spec) {
  Rng rng(spec.seed);
  PlantedCorpus out;
  out.clusters = spec.clusters_override.empty() ? default_clusters(spec, rng) : spec.clusters_override;
  validate(spec, out.clusters);

  std::discrete_distribution<int> pick_cluster(spec.weights.begin(), spec.weights.end());
  std::uniform_int_distribution<int> pick_length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<ItemId> any_item(0, static_cast<ItemId>(spec.items - 1));
  std::bernoulli_distribution corrupt(spec.noise);

  for (int u = 0; u < spec.users; ++u) {
    const int c = pick_cluster(rng);
    const auto& cl = out.clusters[static_cast<std::size_t>(c)];
    const std::string user = padded('u', static_cast<std::size_t>(u));
    out.labels.emplace(user, c);
    const int length = pick_length(rng);
    std::uniform_int_distribution<std::size_t> start(0, cl.items.size() - 1);
    std::size_t state = start(rng);
    for (int step = 0; step < length; ++step) {
      if (step > 0) state = sample_row(cl.transitions, static_cast<Eigen::Index>(state), rng);
      ItemId emitted = cl.items[state];
      if (corrupt(rng)) emitted = any_item(rng);
      out.interactions.push_back(
          Interaction{user, padded('i', emitted), static_cast<std::int64_t>(u) * 1000 + step});
    }
  }
  return out;
}

void write_interactions_csv(std::ostream& out, const std::vector<Interaction>& interactions) {
  for (const auto& r : interactions) out << r.user_id << ',' << r.item_id << ',' << r.timestamp << '\n';
}

void write_labels_csv(std::ostream& out, const std::map<std::string, int>& labels) {
  out << "user,cluster\n";
  for (const auto& [user, c] : labels) out << user << ',' << c << '\n';
}

std::map<std::string, int> read_labels_csv(std::istream& in) {
  std::map<std::string, int> labels;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && line.rfind("user,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorCode::format, "bad label row '" + line + "'");
    try {
      labels[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::format, "bad label row '" + line + "'");
    }
  }
  return labels;
}

double cluster_agreement(const std::vector<int>& assigned, const std::vector<int>& truth) {
  if (assigned.size() != truth.size()) {
    fail(ErrorCode::dimension, "cluster_agreement: " + std::to_string(assigned.size()) + " assignments vs " +
                                   std::to_string(truth.size()) + " labels");
  }
  const std::size_t n = assigned.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{assigned[i], truth[i]}] += 1.0;
    rows[assigned[i]] += 1.0;
    cols[truth[i]] += 1.0;
  }
  auto pairs = [](double m) { return m * (m - 1.0) / 2.0; };
  double index = 0.0, a = 0.0, b = 0.0;
  for (const auto& [key, m] : joint) index += pairs(m);
  for (const auto& [key, m] : rows) a += pairs(m);
  for (const auto& [key, m] : cols) b += pairs(m);
  const double expected = a * b / pairs(static_cast<double>(n));
  const double max_index = 0.5 * (a + b);
  if (max_index == expected) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace clusterseq
