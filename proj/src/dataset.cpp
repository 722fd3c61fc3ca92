#include "clusterseq/dataset.hpp"

#include "clusterseq/core/binary_io.hpp"
#include "clusterseq/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace clusterseq {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_timestamp(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && out >= 0;
}

// Splits into exactly three comma-separated trimmed fields.
bool split_record(std::string_view line, std::string_view fields[3]) {
  std::size_t start = 0;
  for (int f = 0; f < 3; ++f) {
    const std::size_t comma = line.find(',', start);
    if (f < 2 && comma == std::string_view::npos) return false;
    const std::size_t end = f < 2 ? comma : line.size();
    if (f == 2 && line.find(',', start) != std::string_view::npos) return false;
    fields[f] = trim(line.substr(start, end - start));
    start = end + 1;
  }
  return true;
}

}  // namespace

IngestResult ingest_interactions(std::istream& in) {
  IngestResult result;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::string_view fields[3];
    const bool split_ok = split_record(view, fields);
    std::int64_t ts = 0;
    const bool ts_ok = split_ok && parse_timestamp(fields[2], ts);
    if (first && split_ok && !ts_ok && !fields[2].empty() &&
        std::isalpha(static_cast<unsigned char>(fields[2].front()))) {
      // header row, e.g. "user,item,timestamp"
      result.header_skipped = true;
      first = false;
      continue;
    }
    first = false;
    ++result.lines;
    if (!ts_ok || fields[0].empty() || fields[1].empty()) {
      ++result.malformed;
      continue;
    }
    result.interactions.push_back(Interaction{std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (in.bad()) fail(ErrorCode::io, "read failure while ingesting interactions");
  if (result.lines == 0) result.warnings.push_back("no interaction records found");
  if (result.malformed > 0) {
    result.warnings.push_back("skipped " + std::to_string(result.malformed) + " malformed line(s)");
  }
  if (result.malformed * 2 > result.lines) {
    fail(ErrorCode::format, std::to_string(result.malformed) + " of " + std::to_string(result.lines) +
                                " lines are malformed");
  }
  return result;
}

IngestResult ingest_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  return ingest_interactions(in);
}

// ---------------------------------------------------------------------------

std::vector<UserId> Corpus::users(UserSplit which) const {
  std::vector<UserId> out;
  for (std::size_t u = 0; u < split.size(); ++u) {
    if (split[u] == which) out.push_back(static_cast<UserId>(u));
  }
  return out;
}

bool Corpus::has_interacted(UserId user, ItemId item) const {
  const auto& set = item_sets_[user];
  return std::binary_search(set.begin(), set.end(), item);
}

UserId Corpus::user_index(const std::string& external) const {
  auto it = user_lookup_.find(external);
  if (it == user_lookup_.end()) fail(ErrorCode::index, "unknown user '" + external + "'");
  return it->second;
}

ItemId Corpus::item_index(const std::string& external) const {
  auto it = item_lookup_.find(external);
  if (it == item_lookup_.end()) fail(ErrorCode::index, "unknown item '" + external + "'");
  return it->second;
}

void Corpus::reindex() {
  if (user_ids.size() != sequences.size() || split.size() != sequences.size()) {
    fail(ErrorCode::contract, "corpus user tables have inconsistent sizes");
  }
  item_sets_.assign(sequences.size(), {});
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    auto& set = item_sets_[u];
    set = sequences[u];
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    if (!set.empty() && set.back() >= item_ids.size()) {
      fail(ErrorCode::index, "user " + std::to_string(u) + " references item " + std::to_string(set.back()) +
                                 " outside a vocabulary of " + std::to_string(item_ids.size()));
    }
  }
  user_lookup_.clear();
  item_lookup_.clear();
  for (std::size_t u = 0; u < user_ids.size(); ++u) user_lookup_.emplace(user_ids[u], static_cast<UserId>(u));
  for (std::size_t i = 0; i < item_ids.size(); ++i) item_lookup_.emplace(item_ids[i], static_cast<ItemId>(i));
}

Corpus preprocess(const std::vector<Interaction>& raw, int shots, int min_len) {
  if (shots < 3) fail(ErrorCode::configuration, "K must be at least 3, got " + std::to_string(shots));
  if (min_len < shots) {
    fail(ErrorCode::configuration, "minimum sequence length " + std::to_string(min_len) + " is below K=" +
                                       std::to_string(shots));
  }

  // record positions per user, in input order
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < raw.size(); ++i) by_user[raw[i].user_id].push_back(i);

  struct Kept {
    const std::string* id;
    std::int64_t first_time;
    std::vector<std::size_t> records;
  };
  std::vector<Kept> kept;
  for (auto& [id, records] : by_user) {
    if (records.size() < static_cast<std::size_t>(min_len)) continue;
    std::stable_sort(records.begin(), records.end(),
                     [&](std::size_t a, std::size_t b) { return raw[a].timestamp < raw[b].timestamp; });
    kept.push_back(Kept{&id, raw[records.front()].timestamp, std::move(records)});
  }
  if (kept.empty()) {
    fail(ErrorCode::empty_corpus, "no user has at least " + std::to_string(min_len) + " interactions");
  }
  std::sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) {
    if (a.first_time != b.first_time) return a.first_time < b.first_time;
    return *a.id < *b.id;
  });

  Corpus corpus;
  std::unordered_map<std::string, ItemId> items;
  for (const Kept& user : kept) {
    corpus.user_ids.push_back(*user.id);
    corpus.split.push_back(UserSplit::train);
    auto& seq = corpus.sequences.emplace_back();
    seq.reserve(user.records.size());
    for (std::size_t r : user.records) {
      const std::string& item = raw[r].item_id;
      auto [it, inserted] = items.emplace(item, static_cast<ItemId>(corpus.item_ids.size()));
      if (inserted) corpus.item_ids.push_back(item);
      seq.push_back(it->second);
    }
  }
  corpus.reindex();
  return corpus;
}

SplitReport split_users(Corpus& corpus, double test_fraction, int shots) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::configuration, "test fraction must lie in (0, 1)");
  }
  const std::size_t users = corpus.user_count();
  if (users < 2) fail(ErrorCode::split, "need at least 2 users to split");
  std::size_t n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(users) - 1e-9));
  n_test = std::min(n_test, users - 1);
  const std::size_t first_test = users - n_test;

  std::vector<bool> seen(corpus.item_count(), false);
  for (std::size_t u = 0; u < first_test; ++u) {
    for (ItemId i : corpus.sequences[u]) seen[i] = true;
  }

  Corpus out;
  out.item_ids = corpus.item_ids;
  SplitReport report;
  for (std::size_t u = 0; u < users; ++u) {
    const bool test = u >= first_test;
    if (test) {
      const auto& seq = corpus.sequences[u];
      const std::size_t window = std::min(seq.size(), static_cast<std::size_t>(shots));
      const bool known = std::all_of(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(window),
                                     [&](ItemId i) { return seen[i]; });
      if (!known) {
        ++report.dropped;
        continue;
      }
      ++report.test_users;
    }
    out.sequences.push_back(corpus.sequences[u]);
    out.user_ids.push_back(corpus.user_ids[u]);
    out.split.push_back(test ? UserSplit::test : UserSplit::train);
  }
  if (report.test_users == 0) {
    fail(ErrorCode::split, "every test user was dropped for unseen items; try a larger test fraction");
  }
  out.reindex();
  corpus = std::move(out);
  return report;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.users = corpus.user_count();
  s.items = corpus.item_count();
  for (std::size_t u = 0; u < s.users; ++u) {
    s.interactions += corpus.sequences[u].size();
    (corpus.split[u] == UserSplit::test ? s.test_users : s.train_users) += 1;
  }
  s.mean_length = s.users ? static_cast<double>(s.interactions) / static_cast<double>(s.users) : 0.0;
  return s;
}

void write_stats_csv(std::ostream& out, const CorpusStats& s) {
  out << "users,items,interactions,mean_length,train_users,test_users\n"
      << s.users << ',' << s.items << ',' << s.interactions << ',' << s.mean_length << ',' << s.train_users
      << ',' << s.test_users << '\n';
}

// ---------------------------------------------------------------------------

std::vector<ItemId> sample_negatives(const Corpus& corpus, UserId user, std::size_t n, Rng& rng) {
  const std::size_t vocab = corpus.item_count();
  const std::size_t candidates = vocab - corpus.item_set(user).size();
  if (candidates < n) {
    fail(ErrorCode::sampling, "user " + std::to_string(user) + " has " + std::to_string(candidates) +
                                  " candidate negatives, " + std::to_string(n) + " requested");
  }
  std::vector<ItemId> out;
  out.reserve(n);
  if (n * 2 <= candidates) {
    // rejection sampling: uniform over the complement, distinct by retry
    std::uniform_int_distribution<ItemId> pick(0, static_cast<ItemId>(vocab - 1));
    std::unordered_set<ItemId> taken;
    while (out.size() < n) {
      const ItemId i = pick(rng);
      if (corpus.has_interacted(user, i) || !taken.insert(i).second) continue;
      out.push_back(i);
    }
    return out;
  }
  std::vector<ItemId> pool;
  pool.reserve(candidates);
  for (ItemId i = 0; i < vocab; ++i) {
    if (!corpus.has_interacted(user, i)) pool.push_back(i);
  }
  // partial Fisher-Yates
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
    out.push_back(pool[k]);
  }
  return out;
}

TaskEpisode sample_episode(const Corpus& corpus, UserId user, int shots, Rng& rng,
                           std::size_t query_negatives) {
  if (user >= corpus.user_count()) fail(ErrorCode::index, "unknown user " + std::to_string(user));
  if (shots < 2) fail(ErrorCode::episode, "K must be at least 2");
  const auto& seq = corpus.sequences[user];
  const auto k = static_cast<std::size_t>(shots);
  if (seq.size() < k) {
    fail(ErrorCode::episode, "user " + std::to_string(user) + " has " + std::to_string(seq.size()) +
                                 " interactions, K=" + std::to_string(shots));
  }
  std::size_t offset = 0;
  if (corpus.split[user] == UserSplit::train) {
    std::uniform_int_distribution<std::size_t> pick(0, seq.size() - k);
    offset = pick(rng);
  }
  TaskEpisode ep;
  ep.user = user;
  ep.support.assign(seq.begin() + static_cast<std::ptrdiff_t>(offset),
                    seq.begin() + static_cast<std::ptrdiff_t>(offset + k - 1));
  ep.query = seq[offset + k - 1];
  for (std::size_t i = 0; i + 2 < k; ++i) ep.support_negatives.push_back(sample_negatives(corpus, user, 1, rng)[0]);
  ep.query_negatives = sample_negatives(corpus, user, query_negatives, rng);
  return ep;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kCorpusMagic[] = "CSEQD1";
}

void save_corpus(const Corpus& corpus, std::ostream& out) {
  out.write(kCorpusMagic, 6);
  binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.user_count()));
  binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.item_count()));
  for (const auto& id : corpus.item_ids) binary::write_string(out, id);
  for (std::size_t u = 0; u < corpus.user_count(); ++u) {
    binary::write_string(out, corpus.user_ids[u]);
    binary::write_uint<std::uint8_t>(out, static_cast<std::uint8_t>(corpus.split[u]));
    binary::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.sequences[u].size()));
    for (ItemId i : corpus.sequences[u]) binary::write_uint<std::uint32_t>(out, i);
  }
  if (!out) fail(ErrorCode::io, "write failure while saving corpus");
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write '" + path.string() + "'");
  save_corpus(corpus, out);
}

Corpus load_corpus(std::istream& in) {
  binary::expect_magic(in, kCorpusMagic);
  Corpus c;
  const auto users = binary::read_uint<std::uint32_t>(in);
  const auto items = binary::read_uint<std::uint32_t>(in);
  c.item_ids.reserve(items);
  for (std::uint32_t i = 0; i < items; ++i) c.item_ids.push_back(binary::read_string(in));
  for (std::uint32_t u = 0; u < users; ++u) {
    c.user_ids.push_back(binary::read_string(in));
    const auto label = binary::read_uint<std::uint8_t>(in);
    if (label > 1) fail(ErrorCode::format, "bad split label in corpus cache");
    c.split.push_back(static_cast<UserSplit>(label));
    const auto len = binary::read_uint<std::uint32_t>(in);
    auto& seq = c.sequences.emplace_back();
    seq.reserve(len);
    for (std::uint32_t k = 0; k < len; ++k) seq.push_back(binary::read_uint<std::uint32_t>(in));
  }
  c.reindex();
  return c;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  return load_corpus(in);
}

}  // namespace clusterseq
