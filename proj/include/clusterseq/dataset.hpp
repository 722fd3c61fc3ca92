#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace clusterseq {

using ItemId = std::uint32_t;
using UserId = std::uint32_t;
using Rng = std::mt19937_64;

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

struct IngestResult {
  std::vector<Interaction> interactions;
  std::size_t lines = 0;
  std::size_t malformed = 0;
  bool header_skipped = false;
  std::vector<std::string> warnings;
};

/// Reads `user,item,timestamp` records, one per line. A single leading header
/// row is detected and skipped. Malformed lines are skipped and counted; more
/// than half malformed is a format error.
IngestResult ingest_interactions(std::istream& in);
IngestResult ingest_interactions(const std::filesystem::path& path);

enum class UserSplit : std::uint8_t { train = 0, test = 1 };

/// Dense-indexed, time-ordered interaction sequences.
struct Corpus {
  /// dense user -> chronological dense items
  std::vector<std::vector<ItemId>> sequences;
  /// dense -> external ids
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<UserSplit> split;

  std::size_t user_count() const { return sequences.size(); }
  std::size_t item_count() const { return item_ids.size(); }

  std::vector<UserId> users(UserSplit which) const;

  /// Distinct items of a user, sorted.
  const std::vector<ItemId>& item_set(UserId user) const { return item_sets_[user]; }
  bool has_interacted(UserId user, ItemId item) const;

  UserId user_index(const std::string& external) const;
  ItemId item_index(const std::string& external) const;

  /// Recomputes lookup tables after the public fields change.
  void reindex();

 private:
  std::vector<std::vector<ItemId>> item_sets_;
  std::unordered_map<std::string, UserId> user_lookup_;
  std::unordered_map<std::string, ItemId> item_lookup_;
};

/// Drops users shorter than `min_len`, sorts each user's records by time
/// (ties keep input order), orders users by first interaction time then
/// external id, and assigns dense user and item ids in that order. All users
/// start in the train split.
Corpus preprocess(const std::vector<Interaction>& raw, int shots, int min_len);

struct SplitReport {
  std::size_t test_users = 0;
  std::size_t dropped = 0;
};

/// Labels the last ceil(test_fraction * U) users as test, then removes test
/// users whose first `shots` items include an item no train user has seen.
/// Remaining users are renumbered in order.
SplitReport split_users(Corpus& corpus, double test_fraction, int shots);

struct CorpusStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double mean_length = 0.0;
  std::size_t train_users = 0;
  std::size_t test_users = 0;
};

CorpusStats corpus_stats(const Corpus& corpus);
void write_stats_csv(std::ostream& out, const CorpusStats& stats);

/// One user's few-shot task: support items I_1..I_{K-1} and the query I_K.
/// support_negatives[i] is the negative paired with target support[i + 1].
struct TaskEpisode {
  UserId user = 0;
  std::vector<ItemId> support;
  ItemId query = 0;
  std::vector<ItemId> support_negatives;
  std::vector<ItemId> query_negatives;

  int shots() const { return static_cast<int>(support.size()) + 1; }
};

/// n distinct items drawn uniformly from those the user never interacted with.
std::vector<ItemId> sample_negatives(const Corpus& corpus, UserId user, std::size_t n, Rng& rng);

/// Train users get a uniformly placed K-window, test users their first K
/// items. One negative per support target and `query_negatives` for the query.
TaskEpisode sample_episode(const Corpus& corpus, UserId user, int shots, Rng& rng,
                           std::size_t query_negatives = 1);

/// Binary cache, magic "CSEQD1", little-endian fixed-width fields.
void save_corpus(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace clusterseq
