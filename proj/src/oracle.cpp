#include "mraru/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace mraru {

using nlohmann::ordered_json;

void LabelCache::open(std::string path) {
  path_ = std::move(path);
  std::ifstream in(path_);
  if (!in) return;  // a missing file is an empty cache
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("label cache line " + std::to_string(line_no) +
                               ": " + std::string(e.what()));
    }
    entries_[rec.at("id").get<std::string>()] = rec.at("label").get<int>();
  }
}

std::optional<int> LabelCache::lookup(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void LabelCache::store(const std::string& id, int label,
                       const std::string& raw) {
  std::lock_guard lock(mu_);
  entries_[id] = label;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to label cache: " + path_);
  ordered_json rec;
  rec["id"] = id;
  rec["label"] = label;
  rec["raw"] = raw;
  rec["ts"] = static_cast<std::int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  out << rec.dump() << "\n";
}

int TeacherOracle::label(const EmbeddedItem& item) {
  if (auto cached = cache_.lookup(item.id)) {
    ++cache_hits_;
    return *cached;
  }
  const int result = label_uncached(item);
  ++calls_made_;
  cache_.store(item.id, result, "");
  return result;
}

std::vector<std::pair<std::string, int>> TeacherOracle::label_batch(
    const std::vector<std::string>& ids, const Pool& pool) {
  std::vector<std::pair<std::string, int>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    out.emplace_back(id, label(pool.by_id(id)));
  }
  return out;
}

ReplayOracle::ReplayOracle(int num_classes, double noise_rate,
                           std::uint64_t seed)
    : num_classes_(num_classes), noise_rate_(noise_rate), rng_(seed) {
  if (num_classes < 2) throw std::invalid_argument("need K >= 2");
  if (noise_rate < 0.0 || noise_rate >= 1.0) {
    throw std::invalid_argument("noise_rate must be in [0,1)");
  }
}

int ReplayOracle::label_uncached(const EmbeddedItem& item) {
  if (!item.gold_label) {
    throw std::runtime_error("replay oracle needs a gold label for item " +
                             item.id);
  }
  const int gold = *item.gold_label;
  if (noise_rate_ > 0.0 && rng_.uniform() < noise_rate_) {
    // uniform over the other K-1 classes
    const int offset = 1 + static_cast<int>(rng_.uniform_index(num_classes_ - 1));
    return (gold + offset) % num_classes_;
  }
  return gold;
}

void LlmOracleConfig::validate() const {
  if (endpoint_url.empty()) throw std::invalid_argument("empty endpoint_url");
  if (prompt_template.find("{text}") == std::string::npos ||
      prompt_template.find("{classes}") == std::string::npos) {
    throw std::invalid_argument(
        "prompt_template must contain {text} and {classes}");
  }
  if (max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
  if (parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
}

int parse_class_response(const std::string& message,
                         const ClassCatalog& catalog) {
  std::string haystack = message;
  std::transform(haystack.begin(), haystack.end(), haystack.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  int best = -1;
  std::size_t best_len = 0;
  std::size_t best_pos = std::string::npos;
  for (std::size_t k = 0; k < catalog.names.size(); ++k) {
    std::string needle = catalog.names[k];
    std::transform(needle.begin(), needle.end(), needle.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    const std::size_t pos = haystack.find(needle);
    if (pos == std::string::npos) continue;
    if (needle.size() > best_len ||
        (needle.size() == best_len && pos < best_pos)) {
      best = static_cast<int>(k);
      best_len = needle.size();
      best_pos = pos;
    }
  }
  return best;
}

namespace {

struct ParsedUrl {
  std::string base;  // scheme://host:port
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("endpoint_url needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string join_classes(const ClassCatalog& catalog) {
  std::string out;
  for (std::size_t i = 0; i < catalog.names.size(); ++i) {
    if (i) out += ", ";
    out += catalog.names[i];
  }
  return out;
}

std::string replace_all(std::string s, const std::string& from,
                        const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

}  // namespace

LlmOracle::LlmOracle(LlmOracleConfig cfg, ClassCatalog catalog)
    : cfg_(std::move(cfg)), catalog_(std::move(catalog)) {
  cfg_.validate();
  catalog_.validate();
  if (!cfg_.cache_path.empty()) cache_.open(cfg_.cache_path);
}

std::string LlmOracle::render_prompt(const std::string& text) const {
  std::string prompt =
      replace_all(cfg_.prompt_template, "{classes}", join_classes(catalog_));
  return replace_all(prompt, "{text}", text);
}

std::string LlmOracle::request_completion(const std::string& prompt) const {
  const ParsedUrl url = parse_url(cfg_.endpoint_url);
  httplib::Client client(url.base);
  client.set_connection_timeout(cfg_.timeout_seconds);
  client.set_read_timeout(cfg_.timeout_seconds);

  ordered_json body;
  body["model"] = cfg_.model_name;
  body["messages"] = ordered_json::array(
      {{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = cfg_.temperature;

  httplib::Headers headers;
  if (!cfg_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    auto res =
        client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      const auto parsed = ordered_json::parse(res->body);
      return parsed.at("choices").at(0).at("message").at("content")
          .get<std::string>();
    } catch (const std::exception& e) {
      last_error = "malformed response body: " + std::string(e.what());
    }
  }
  throw std::runtime_error("chat completion failed after " +
                           std::to_string(cfg_.max_retries + 1) +
                           " attempts: " + last_error);
}

int LlmOracle::label_uncached(const EmbeddedItem& item) {
  if (!item.text || item.text->empty()) {
    throw std::runtime_error("item " + item.id + " has no text to label");
  }
  std::string prompt = render_prompt(*item.text);
  std::string content = request_completion(prompt);
  int idx = parse_class_response(content, catalog_);
  if (idx < 0) {
    // one reprompt with an explicit class list, then give up
    prompt += "\n\nRespond with only one of: " + join_classes(catalog_);
    content = request_completion(prompt);
    idx = parse_class_response(content, catalog_);
  }
  if (idx < 0) {
    throw std::runtime_error("unparseable teacher response for item " +
                             item.id + ": " + content);
  }
  return idx;
}

void check_endpoint_reachable(const LlmOracleConfig& cfg) {
  const ParsedUrl url = parse_url(cfg.endpoint_url);
  httplib::Client client(url.base);
  client.set_connection_timeout(std::min(cfg.timeout_seconds, 5));
  client.set_read_timeout(std::min(cfg.timeout_seconds, 5));
  auto res = client.Get("/");
  if (!res) {
    throw std::runtime_error("endpoint unreachable: " + cfg.endpoint_url +
                             " (" + httplib::to_string(res.error()) + ")");
  }
}

std::vector<std::pair<std::string, int>> LlmOracle::label_batch_parallel(
    const std::vector<std::string>& ids, const Pool& pool) {
  std::vector<std::optional<int>> results(ids.size());
  std::vector<std::size_t> misses;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (auto cached = cache_.lookup(ids[i])) {
      ++cache_hits_;
      results[i] = *cached;
    } else {
      misses.push_back(i);
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex state_mu;
  std::exception_ptr failure;
  const std::size_t n_workers =
      std::min<std::size_t>(cfg_.parallelism, misses.size());
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t slot = next.fetch_add(1);
        if (slot >= misses.size()) return;
        {
          std::lock_guard lock(state_mu);
          if (failure) return;
        }
        const std::size_t i = misses[slot];
        try {
          const int label = label_uncached(pool.by_id(ids[i]));
          std::lock_guard lock(state_mu);
          results[i] = label;
          ++calls_made_;
          cache_.store(ids[i], label, "");
        } catch (...) {
          std::lock_guard lock(state_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<std::pair<std::string, int>> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.emplace_back(ids[i], *results[i]);
  }
  return out;
}

}  // namespace mraru
