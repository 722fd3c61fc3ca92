#include "clusterseq/run_config.hpp"

#include "clusterseq/core/error.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace clusterseq {

using nlohmann::json;

void RunConfig::validate() const {
  MetaConfig m = meta;
  if (m.model.items == 0) m.model.items = 1;  // filled from the corpus later
  m.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail(ErrorCode::configuration, "test_fraction must lie in (0, 1)");
  if (min_length != 0 && min_length < meta.model.shots) {
    fail(ErrorCode::configuration, "min_length must be at least K");
  }
  if (negatives < 1) fail(ErrorCode::configuration, "negatives must be positive");
  if (checkpoint_every < 0) fail(ErrorCode::configuration, "checkpoint_every must be nonnegative");
}

namespace {

template <class T>
T typed(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::configuration, "config key '" + key + "' has the wrong type");
  }
}

int integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) fail(ErrorCode::configuration, "config key '" + key + "' must be an integer");
  return v.get<int>();
}

double number(const json& v, const std::string& key) {
  if (!v.is_number()) fail(ErrorCode::configuration, "config key '" + key + "' must be a number");
  return v.get<double>();
}

bool flag(const json& v, const std::string& key) {
  if (!v.is_boolean()) fail(ErrorCode::configuration, "config key '" + key + "' must be true or false");
  return v.get<bool>();
}

}  // namespace

RunConfig parse_run_config(std::string_view text, RunConfig c) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::configuration, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::configuration, "config must be a JSON object");

  ModelConfig& m = c.meta.model;
  for (const auto& [key, v] : doc.items()) {
    if (key == "seed") {
      if (!v.is_number_unsigned()) fail(ErrorCode::configuration, "config key 'seed' must be a nonnegative integer");
      c.meta.seed = v.get<std::uint64_t>();
    } else if (key == "epochs") c.meta.epochs = integer(v, key);
    else if (key == "k") m.shots = integer(v, key);
    else if (key == "dim") m.dim = integer(v, key);
    else if (key == "clusters") m.clusters = integer(v, key);
    else if (key == "ae_depth") m.ae_depth = integer(v, key);
    else if (key == "epsilon") m.epsilon = number(v, key);
    else if (key == "sigma") m.sigma = number(v, key);
    else if (key == "neighbors") m.neighbors = integer(v, key);
    else if (key == "margin") m.margin = number(v, key);
    else if (key == "gcn_activation") m.gcn_activation = parse_activation(typed<std::string>(v, key));
    else if (key == "use_clustering") m.use_clustering = flag(v, key);
    else if (key == "no_output_softmax") m.output_softmax = !flag(v, key);
    else if (key == "literal_decoder_hidden") m.literal_decoder_hidden = flag(v, key);
    else if (key == "paper_literal_sharpen") m.paper_literal_sharpen = flag(v, key);
    else if (key == "paper_literal_indices") m.paper_literal_indices = flag(v, key);
    else if (key == "alpha") c.meta.alpha = number(v, key);
    else if (key == "beta") c.meta.beta = number(v, key);
    else if (key == "inner_steps") c.meta.inner_steps = integer(v, key);
    else if (key == "batch_size") c.meta.batch_size = integer(v, key);
    else if (key == "test_fraction") c.test_fraction = number(v, key);
    else if (key == "min_length") c.min_length = integer(v, key);
    else if (key == "negatives") {
      if (!v.is_number_unsigned()) fail(ErrorCode::configuration, "config key 'negatives' must be a positive integer");
      c.negatives = v.get<std::size_t>();
    } else if (key == "checkpoint_every") c.checkpoint_every = integer(v, key);
    else if (key == "data") c.data = typed<std::string>(v, key);
    else if (key == "cache") c.cache = typed<std::string>(v, key);
    else if (key == "checkpoint") c.checkpoint = typed<std::string>(v, key);
    else if (key == "report_dir") c.report_dir = typed<std::string>(v, key);
    else fail(ErrorCode::configuration, "unknown config key '" + key + "'");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), std::move(base));
}

std::string to_json(const RunConfig& c) {
  const ModelConfig& m = c.meta.model;
  json doc = {
      {"seed", c.meta.seed},
      {"epochs", c.meta.epochs},
      {"k", m.shots},
      {"dim", m.dim},
      {"clusters", m.clusters},
      {"ae_depth", m.ae_depth},
      {"epsilon", m.epsilon},
      {"sigma", m.sigma},
      {"neighbors", m.neighbors},
      {"margin", m.margin},
      {"gcn_activation", std::string(to_string(m.gcn_activation))},
      {"use_clustering", m.use_clustering},
      {"no_output_softmax", !m.output_softmax},
      {"literal_decoder_hidden", m.literal_decoder_hidden},
      {"paper_literal_sharpen", m.paper_literal_sharpen},
      {"paper_literal_indices", m.paper_literal_indices},
      {"alpha", c.meta.alpha},
      {"beta", c.meta.beta},
      {"inner_steps", c.meta.inner_steps},
      {"batch_size", c.meta.batch_size},
      {"test_fraction", c.test_fraction},
      {"min_length", c.min_length},
      {"negatives", c.negatives},
      {"checkpoint_every", c.checkpoint_every},
      {"data", c.data.string()},
      {"cache", c.cache.string()},
      {"checkpoint", c.checkpoint.string()},
      {"report_dir", c.report_dir.string()},
  };
  return doc.dump(2) + "\n";
}

}  // namespace clusterseq
