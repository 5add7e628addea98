#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mraru/dataset.hpp"
#include "mraru/rng.hpp"

namespace mraru {

// Persistent id -> label map, line-delimited on disk. Append-only within a
// run; survives restarts.
class LabelCache {
 public:
  LabelCache() = default;
  // Binds to a file and loads its existing entries.
  void open(std::string path);

  std::optional<int> lookup(const std::string& id) const;
  void store(const std::string& id, int label, const std::string& raw);
  std::size_t size() const { return entries_.size(); }

 private:
  std::string path_;
  std::unordered_map<std::string, int> entries_;
  mutable std::mutex mu_;
};

// The teacher M_T. A given item id costs at most one remote call per run;
// repeats are served from the cache.
class TeacherOracle {
 public:
  virtual ~TeacherOracle() = default;

  // Labels one item, consulting the cache first.
  int label(const EmbeddedItem& item);

  // Labels ids in order; output order matches input order.
  std::vector<std::pair<std::string, int>> label_batch(
      const std::vector<std::string>& ids, const Pool& pool);

  std::uint64_t calls_made() const { return calls_made_; }
  std::uint64_t cache_hits() const { return cache_hits_; }

 protected:
  virtual int label_uncached(const EmbeddedItem& item) = 0;

  LabelCache cache_;
  std::uint64_t calls_made_ = 0;
  std::uint64_t cache_hits_ = 0;
};

// Replays hidden gold labels, optionally flipping each to a uniformly
// random different class with probability noise_rate.
class ReplayOracle : public TeacherOracle {
 public:
  ReplayOracle(int num_classes, double noise_rate, std::uint64_t seed);

 protected:
  int label_uncached(const EmbeddedItem& item) override;

 private:
  int num_classes_;
  double noise_rate_;
  Rng rng_;
};

struct LlmOracleConfig {
  std::string endpoint_url;  // e.g. http://host:port/v1/chat/completions
  std::string model_name;
  std::string prompt_template =
      "Classify the following text into exactly one of these categories: "
      "{classes}. Respond with only the category name.\n\nText: {text}";
  int max_retries = 2;
  int timeout_seconds = 60;
  double temperature = 0.0;
  int parallelism = 4;
  std::string api_key;            // empty: no Authorization header
  std::string cache_path;         // empty: in-memory cache only
  void validate() const;          // throws on a bad template or retries < 0
};

// Chat-completions client teacher. Parses the assistant message to a class
// index by longest case-insensitive catalog-name match (ties: earliest
// position); on no match, reprompts once with an explicit class list.
class LlmOracle : public TeacherOracle {
 public:
  LlmOracle(LlmOracleConfig cfg, ClassCatalog catalog);

  // Parallel cache-miss labeling with bounded in-flight requests.
  std::vector<std::pair<std::string, int>> label_batch_parallel(
      const std::vector<std::string>& ids, const Pool& pool);

 protected:
  int label_uncached(const EmbeddedItem& item) override;

 private:
  std::string render_prompt(const std::string& text) const;
  std::string request_completion(const std::string& prompt) const;

  LlmOracleConfig cfg_;
  ClassCatalog catalog_;
};

// Longest case-insensitive catalog-name substring match; ties broken by
// earliest position. Returns -1 when no catalog name occurs.
int parse_class_response(const std::string& message,
                         const ClassCatalog& catalog);

// Throws when the configured endpoint does not answer at the transport
// level. Used for fail-fast validation before any run starts.
void check_endpoint_reachable(const LlmOracleConfig& cfg);

}  // namespace mraru
