#include "cli.hpp"

#include "clusterseq/core/error.hpp"
#include "clusterseq/eval.hpp"
#include "clusterseq/run_config.hpp"
#include "clusterseq/synthgen.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>

namespace fs = std::filesystem;

namespace clusterseq::cli {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, k, clusters;
  bool no_clustering = false;
  std::optional<double> test_fraction;
  std::string out;

  std::string input, data, checkpoint, labels, axis;
  std::vector<std::string> values;
  int users = 400, items = 160;
};

void common_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "JSON run config");
  cmd.add_option("--seed", f.seed, "seed for all randomness");
  cmd.add_option("--epochs", f.epochs);
  cmd.add_option("--k", f.k, "shots per user (K)");
  cmd.add_option("--clusters", f.clusters, "cluster count (M)");
  cmd.add_flag("--no-clustering", f.no_clustering, "train the variant without the clustering module");
  cmd.add_option("--test-fraction", f.test_fraction);
  cmd.add_option("--out", f.out, "output directory");
}

RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) c.meta.seed = *f.seed;
  if (f.epochs) c.meta.epochs = *f.epochs;
  if (f.k) c.meta.model.shots = *f.k;
  if (f.clusters) c.meta.model.clusters = *f.clusters;
  if (f.no_clustering) c.meta.model.use_clustering = false;
  if (f.test_fraction) c.test_fraction = *f.test_fraction;
  if (!f.out.empty()) c.report_dir = f.out;
  if (!f.input.empty()) c.data = f.input;
  if (!f.data.empty()) c.cache = f.data;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  return c;
}

fs::path need(const fs::path& p, const char* what) {
  if (p.empty()) fail(ErrorCode::configuration, std::string("no ") + what + " given");
  return p;
}

fs::path output_dir(const RunConfig& c) {
  const fs::path dir = need(c.report_dir, "output directory (--out)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot write " + path.string());
  return f;
}

void echo_config(const fs::path& dir, const RunConfig& c) { open_out(dir / "config.json") << to_json(c); }

Corpus load_cache(const RunConfig& c) { return load_corpus(need(c.cache, "corpus cache (--data)")); }

ModelConfig model_for(const RunConfig& c, const Corpus& corpus) {
  ModelConfig m = c.meta.model;
  m.items = static_cast<int>(corpus.item_count());
  return m;
}

Corpus prepare(const RunConfig& c) {
  IngestResult raw = ingest_interactions(need(c.data, "input interactions (--input)"));
  Corpus corpus = preprocess(raw.interactions, c.meta.model.shots, c.effective_min_length());
  split_users(corpus, c.test_fraction, c.meta.model.shots);
  return corpus;
}

EvalOptions eval_options(const RunConfig& c) {
  return {.seed = c.meta.seed, .negatives = c.negatives, .alpha = c.meta.alpha, .inner_steps = c.meta.inner_steps};
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int cmd_generate(const Flags& f, std::ostream& out) {
  RunConfig c = effective_config(f);
  const fs::path dir = output_dir(c);
  PlantedSpec spec;
  spec.users = f.users;
  spec.items = f.items;
  spec.seed = c.meta.seed;
  PlantedCorpus planted = generate(spec);
  auto interactions = open_out(dir / "interactions.csv");
  write_interactions_csv(interactions, planted.interactions);
  auto labels = open_out(dir / "labels.csv");
  write_labels_csv(labels, planted.labels);
  echo_config(dir, c);
  out << "generated " << planted.interactions.size() << " interactions for " << planted.labels.size()
      << " users in " << dir.string() << '\n';
  return 0;
}

int cmd_preprocess(const Flags& f, std::ostream& out) {
  RunConfig c = effective_config(f);
  c.validate();
  const fs::path dir = output_dir(c);
  IngestResult raw = ingest_interactions(need(c.data, "input interactions (--input)"));
  Corpus corpus = preprocess(raw.interactions, c.meta.model.shots, c.effective_min_length());
  SplitReport split = split_users(corpus, c.test_fraction, c.meta.model.shots);
  if (c.cache.empty()) c.cache = dir / "corpus.cseqd";
  save_corpus(corpus, c.cache);
  auto stats = open_out(dir / "stats.csv");
  const CorpusStats s = corpus_stats(corpus);
  write_stats_csv(stats, s);
  echo_config(dir, c);
  out << "users " << s.users << " items " << s.items << " interactions " << s.interactions << " malformed "
      << raw.malformed << " dropped_test " << split.dropped << '\n';
  return 0;
}

int cmd_train(const Flags& f, std::ostream& out) {
  RunConfig c = effective_config(f);
  const fs::path dir = output_dir(c);
  Corpus corpus = load_cache(c);
  MetaConfig meta = c.meta;
  meta.model = model_for(c, corpus);
  c.validate();
  meta.validate();
  echo_config(dir, c);
  TrainOptions options;
  options.checkpoint = c.checkpoint.empty() ? dir / "checkpoint.cseq" : c.checkpoint;
  options.log = dir / "train_log.csv";
  options.checkpoint_every = c.checkpoint_every;
  TrainResult r = train(corpus, meta, options);
  out << "epochs " << r.log.size();
  if (!r.log.empty()) out << " final_query_loss " << fixed(r.log.back().mean_query_loss);
  out << " checkpoint " << options.checkpoint.string() << '\n';
  return 0;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
  RunConfig c = effective_config(f);
  c.validate();
  const fs::path dir = output_dir(c);
  Corpus corpus = load_cache(c);
  ParameterStore theta = load_checkpoint(need(c.checkpoint, "checkpoint (--checkpoint)"));
  EvalReport report = evaluate(theta, corpus, model_for(c, corpus), eval_options(c));
  auto csv = open_out(dir / "report.csv");
  write_report_csv(csv, report);
  open_out(dir / "report.json") << report_json(report) << '\n';
  echo_config(dir, c);
  out << report_json(report) << '\n';
  return 0;
}

int cmd_sweep(const Flags& f, std::ostream& out, std::ostream& err) {
  RunConfig c = effective_config(f);
  const std::string axis = f.axis;
  if (axis != "K" && axis != "M" && axis != "D" && axis != "B") {
    fail(ErrorCode::configuration, "sweep axis must be one of K, M, D, B, got '" + axis + "'");
  }
  std::vector<int> values;
  for (const std::string& v : f.values) {
    int x = 0;
    try {
      std::size_t used = 0;
      x = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::logic_error&) {
      fail(ErrorCode::configuration, "sweep value '" + v + "' is not an integer");
    }
    if (std::find(values.begin(), values.end(), x) != values.end()) {
      err << "warning: duplicate sweep value " << x << " ignored\n";
      continue;
    }
    values.push_back(x);
  }
  if (values.empty()) fail(ErrorCode::configuration, "no sweep values");
  const fs::path dir = output_dir(c);
  echo_config(dir, c);

  auto csv = open_out(dir / "sweep.csv");
  csv << "axis,value,status,users,mrr,hit1,ndcg5,hr10,error\n";
  int failed = 0;
  for (int value : values) {
    RunConfig point = c;
    ModelConfig& m = point.meta.model;
    if (axis == "K") m.shots = value;
    if (axis == "M") m.clusters = value;
    if (axis == "D") m.dim = value;
    if (axis == "B") point.meta.batch_size = value;
    csv << axis << ',' << value << ',';
    try {
      point.validate();
      Corpus corpus = prepare(point);
      MetaConfig meta = point.meta;
      meta.model = model_for(point, corpus);
      TrainResult trained = train(corpus, meta);
      EvalReport report = evaluate(trained.parameters, corpus, meta.model, eval_options(point));
      const RankingMetrics& r = report.metrics;
      csv << "ok," << r.users << ',' << fixed(r.mrr) << ',' << fixed(r.hit1) << ',' << fixed(r.ndcg5) << ','
          << fixed(r.hr10) << ",\n";
      out << axis << '=' << value << " mrr " << fixed(r.mrr) << '\n';
    } catch (const Error& e) {
      ++failed;
      std::string message = e.what();
      std::replace(message.begin(), message.end(), ',', ';');
      csv << "error,,,,,," << to_string(e.code()) << ": " << message << '\n';
      err << "warning: " << axis << '=' << value << " failed: " << to_string(e.code()) << ": " << e.what() << '\n';
    }
    csv.flush();
  }
  out << values.size() - static_cast<std::size_t>(failed) << " of " << values.size() << " sweep points succeeded\n";
  return 0;
}

int cmd_inspect(const Flags& f, std::ostream& out) {
  RunConfig c = effective_config(f);
  c.validate();
  const fs::path dir = output_dir(c);
  Corpus corpus = load_cache(c);
  ParameterStore theta = load_checkpoint(need(c.checkpoint, "checkpoint (--checkpoint)"));
  ClusterUsage usage = inspect_clusters(theta, corpus, model_for(c, corpus));
  auto rows = open_out(dir / "assignments.csv");
  write_assignments_csv(rows, usage);
  auto hist = open_out(dir / "histogram.csv");
  write_histogram_csv(hist, usage);
  echo_config(dir, c);

  out << "{\"users\":" << usage.rows.size() << ",\"entropy\":" << fixed(usage.entropy)
      << ",\"clusters_above_5pct\":" << usage.clusters_above(0.05);
  if (!f.labels.empty()) {
    std::ifstream in(f.labels);
    if (!in) fail(ErrorCode::io, "cannot read labels " + f.labels);
    const std::map<std::string, int> labels = read_labels_csv(in);
    std::vector<int> assigned, truth;
    for (const UserAssignment& r : usage.rows) {
      auto it = labels.find(r.user);
      if (it == labels.end()) continue;
      assigned.push_back(r.cluster);
      truth.push_back(it->second);
    }
    if (assigned.empty()) fail(ErrorCode::format, "no labeled users in the corpus");
    out << ",\"labeled\":" << assigned.size() << ",\"cluster_agreement\":" << fixed(cluster_agreement(assigned, truth));
  }
  out << "}\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clustering-conditioned meta-learned sequential recommender", "clusterseq"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* generate_cmd = app.add_subcommand("generate", "write a planted synthetic corpus");
  common_flags(*generate_cmd, f);
  generate_cmd->add_option("--users", f.users);
  generate_cmd->add_option("--items", f.items);

  CLI::App* preprocess_cmd = app.add_subcommand("preprocess", "raw CSV to corpus cache and stats");
  common_flags(*preprocess_cmd, f);
  preprocess_cmd->add_option("--input", f.input, "user,item,timestamp CSV");

  CLI::App* train_cmd = app.add_subcommand("train", "meta-train and write a checkpoint");
  common_flags(*train_cmd, f);
  train_cmd->add_option("--data", f.data, "corpus cache");
  train_cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path (default <out>/checkpoint.cseq)");

  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "rank test users' held-out items");
  common_flags(*evaluate_cmd, f);
  evaluate_cmd->add_option("--data", f.data, "corpus cache");
  evaluate_cmd->add_option("--checkpoint", f.checkpoint);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train and evaluate once per hyperparameter value");
  common_flags(*sweep_cmd, f);
  sweep_cmd->add_option("--input", f.input, "user,item,timestamp CSV");
  sweep_cmd->add_option("--axis", f.axis, "K, M, D or B")->required();
  sweep_cmd->add_option("--values", f.values, "comma separated")->required()->delimiter(',');

  CLI::App* inspect_cmd = app.add_subcommand("inspect-clusters", "per-user cluster assignments");
  common_flags(*inspect_cmd, f);
  inspect_cmd->add_option("--data", f.data, "corpus cache");
  inspect_cmd->add_option("--checkpoint", f.checkpoint);
  inspect_cmd->add_option("--labels", f.labels, "planted labels CSV for cluster agreement");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    err << "error: usage: " << message << '\n';
    return 2;
  }

  try {
    if (*generate_cmd) return cmd_generate(f, out);
    if (*preprocess_cmd) return cmd_preprocess(f, out);
    if (*train_cmd) return cmd_train(f, out);
    if (*evaluate_cmd) return cmd_evaluate(f, out);
    if (*sweep_cmd) return cmd_sweep(f, out, err);
    if (*inspect_cmd) return cmd_inspect(f, out);
  } catch (const Error& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    err << "error: " << to_string(e.code()) << ": " << message << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace clusterseq::cli
