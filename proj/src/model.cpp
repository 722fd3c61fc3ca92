#include "clusterseq/model.hpp"

#include "clusterseq/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace clusterseq {

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::configuration, what);
  };
  need(items > 0, "vocabulary must be nonempty");
  need(dim >= 1, "embedding dimension must be positive");
  need(shots >= 3, "K must be at least 3");
  need(clusters >= 2, "need at least 2 clusters");
  need(ae_depth >= 1, "autoencoder depth must be at least 1");
  need(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
  need(sigma >= 0.0, "sigma must be nonnegative");
  need(neighbors >= 1, "n_adj must be at least 1");
  need(margin > 0.0, "margin must be positive");
}

std::vector<int> autoencoder_widths(int dim, int depth) {
  std::vector<int> widths{dim};
  for (int l = 1; l <= depth; ++l) widths.push_back(std::max(1, dim >> l));
  for (int l = depth - 1; l >= 0; --l) widths.push_back(widths[static_cast<std::size_t>(l)]);
  return widths;
}

namespace names {
std::string gru(const std::string& which, const std::string& part) { return which + "." + part; }
std::string fc(int index, const std::string& part) { return "fc" + std::to_string(index) + "." + part; }
std::string ae(int index, int layer, const std::string& part) {
  return "ae" + std::to_string(index) + ".layer" + std::to_string(layer) + "." + part;
}
std::string gcn(int layer) { return "gcn.w" + std::to_string(layer); }
std::string film(const std::string& head, const std::string& part) { return "film." + head + "." + part; }
}  // namespace names

namespace {

Matrix uniform(Rng& rng, int rows, int cols, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

void add_linear(ParameterStore& store, Rng& rng, const std::string& weight, const std::string& bias, int out,
                int in, double bias_value = 0.0, double bound = 0.0) {
  if (bound <= 0.0) bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(weight, uniform(rng, out, in, bound), 2);
  store.add_vector(bias, Vector::Constant(out, bias_value));
}

}  // namespace

ParameterStore init_parameters(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int d = config.dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  ParameterStore store;

  store.add(names::item_embedding, uniform(rng, config.items, d, bound), 2);
  for (const std::string which : {"enc", "dec"}) {
    for (const std::string gate : {"r", "z", "n"}) {
      store.add(names::gru(which, "w_x" + gate), uniform(rng, d, d, bound), 2);
      store.add(names::gru(which, "w_h" + gate), uniform(rng, d, d, bound), 2);
    }
    for (const std::string bias : {"b_r", "b_z", "b_xn", "b_hn"}) {
      store.add_vector(names::gru(which, bias), Vector::Zero(d));
    }
  }
  add_linear(store, rng, names::fc(1, "weight"), names::fc(1, "bias"), config.shots, 2 * d, 0.0, bound);
  add_linear(store, rng, names::fc(2, "weight"), names::fc(2, "bias"), d, 2 * d, 0.0, bound);
  add_linear(store, rng, names::fc(3, "weight"), names::fc(3, "bias"), d, d, 0.0, bound);

  const auto widths = autoencoder_widths(d, config.ae_depth);
  for (int j = 0; j < config.clusters; ++j) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      add_linear(store, rng, names::ae(j, static_cast<int>(l), "weight"), names::ae(j, static_cast<int>(l), "bias"),
                 widths[l + 1], widths[l]);
    }
  }
  // GCN layer l maps encoder width l-1 to width l; the last one projects to M.
  for (int l = 1; l <= config.ae_depth + 1; ++l) {
    const int in = widths[static_cast<std::size_t>(l - 1)];
    const int out = l <= config.ae_depth ? widths[static_cast<std::size_t>(l)] : config.clusters;
    store.add(names::gcn(l), uniform(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))), 2);
  }
  add_linear(store, rng, names::film("gamma", "weight"), names::film("gamma", "bias"), d, config.clusters, 1.0);
  add_linear(store, rng, names::film("beta", "weight"), names::film("beta", "bias"), d, config.clusters);
  return store;
}

}  // namespace clusterseq
