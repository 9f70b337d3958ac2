#include "pbtseg/rating.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <set>
#include <tuple>

#include <json.hpp>

#include "pbtseg/phantom.hpp"
#include "pbtseg/stats.hpp"

namespace pbtseg {

using nlohmann::json;

std::vector<std::string> blinded_order(std::vector<std::string> case_ids, std::uint64_t seed) {
  std::sort(case_ids.begin(), case_ids.end());
  Xorshift64 rng(seed);
  for (std::size_t i = case_ids.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(case_ids[i - 1], case_ids[j]);
  }
  return case_ids;
}

std::string blinded_key(std::uint64_t salt, std::uint64_t seed, std::size_t position) {
  Xorshift64 rng(salt ^ (seed * 0x9E3779B97F4A7C15ULL) ^ (static_cast<std::uint64_t>(position + 1) << 32));
  rng.next();
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(rng.next()));
  return buf;
}

std::vector<RatingSummaryRow> summarize_ratings(const std::vector<RatingRecord>& log) {
  std::map<std::tuple<std::string, std::string, Channel>, int> latest;
  for (const auto& r : log) latest[{r.rater_id, r.blinded_case_key, r.channel}] = r.stars;

  std::map<std::pair<std::string, Channel>, std::vector<double>> groups;
  for (const auto& [k, stars] : latest) groups[{std::get<0>(k), std::get<2>(k)}].push_back(stars);

  std::vector<RatingSummaryRow> rows;
  for (const auto& [k, values] : groups) {
    RatingSummaryRow row;
    row.rater_id = k.first;
    row.channel = k.second;
    const auto s = summarize(values);
    row.n = s.n;
    row.mean = s.mean;
    row.sd = s.sd;
    for (double v : values) ++row.histogram[static_cast<std::size_t>(v) - 1];
    rows.push_back(std::move(row));
  }
  return rows;  // map order: rater, then channel code (T2H < ET < CC)
}

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

RatingStore::RatingStore(std::vector<std::string> case_ids, std::optional<std::filesystem::path> log_path,
                         std::uint64_t key_salt, Clock clock)
    : case_ids_(std::move(case_ids)), key_salt_(key_salt), clock_(std::move(clock)), log_path_(std::move(log_path)) {
  std::sort(case_ids_.begin(), case_ids_.end());
  if (std::adjacent_find(case_ids_.begin(), case_ids_.end()) != case_ids_.end()) {
    throw std::invalid_argument("duplicate case id in rating cohort");
  }
  if (log_path_) {
    if (std::filesystem::exists(*log_path_)) replay(*log_path_);
    if (log_path_->has_parent_path()) std::filesystem::create_directories(log_path_->parent_path());
    log_out_.open(*log_path_, std::ios::binary | std::ios::app);
    if (!log_out_) throw std::runtime_error("cannot open ratings log " + log_path_->string());
  }
}

void RatingStore::append(const std::string& line) {
  if (!log_out_.is_open()) return;
  log_out_ << line << '\n';
  log_out_.flush();
  if (!log_out_) throw std::runtime_error("failed to append to ratings log");
}

BlindedSession RatingStore::make_session(const std::string& session_id, const std::string& rater_id,
                                         std::uint64_t seed) const {
  BlindedSession s;
  s.session_id = session_id;
  s.rater_id = rater_id;
  s.seed = seed;
  const auto order = blinded_order(case_ids_, seed);
  s.keys.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) s.keys.push_back(blinded_key(key_salt_, seed, i));
  return s;
}

void RatingStore::register_session(BlindedSession s) {
  const auto order = blinded_order(case_ids_, s.seed);
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto [it, inserted] = key_to_case_.emplace(s.keys[i], order[i]);
    if (!inserted && it->second != order[i]) throw std::runtime_error("blinded key collision");
  }
  sessions_.emplace(s.session_id, std::move(s));
}

void RatingStore::replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "session") {
        auto s = make_session(j.at("session_id"), j.at("rater_id"), j.at("seed").get<std::uint64_t>());
        if (s.keys != j.at("keys").get<std::vector<std::string>>()) {
          throw std::runtime_error("session keys do not match the current cohort");
        }
        register_session(std::move(s));
        ++session_counter_;
      } else if (type == "rating") {
        RatingRecord r{j.at("session_id"), j.at("rater_id"),   j.at("key"),
                       parse_channel(j.at("channel").get<std::string>()), j.at("stars"), j.at("timestamp")};
        records_.push_back(std::move(r));
      } else if (type == "finalize") {
        sessions_.at(j.at("session_id").get<std::string>()).finalized = true;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

BlindedSession RatingStore::create_session(const std::string& rater_id, std::uint64_t seed) {
  if (case_ids_.empty()) throw RatingError(RatingError::Kind::BadRequest, "cohort is empty");
  if (rater_id.empty()) throw RatingError(RatingError::Kind::BadRequest, "rater_id is required");
  std::unique_lock lock(mutex_);
  char id[24];
  std::snprintf(id, sizeof(id), "S%04zu", session_counter_ + 1);
  auto s = make_session(id, rater_id, seed);
  append(json{{"type", "session"}, {"session_id", s.session_id}, {"rater_id", rater_id}, {"seed", seed},
              {"keys", s.keys}}
             .dump());
  ++session_counter_;
  register_session(s);
  return s;
}

const BlindedSession& RatingStore::session_locked(const std::string& session_id) const {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw RatingError(RatingError::Kind::NotFound, "unknown session");
  return it->second;
}

BlindedSession RatingStore::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  return session_locked(session_id);
}

std::vector<BlindedSession> RatingStore::sessions() const {
  std::shared_lock lock(mutex_);
  std::vector<BlindedSession> out;
  for (const auto& [_, s] : sessions_) out.push_back(s);
  return out;
}

RatingRecord RatingStore::submit(const std::string& session_id, const std::string& rater_id, const std::string& key,
                                 Channel channel, int stars) {
  if (stars < 1 || stars > 4) throw RatingError(RatingError::Kind::BadRequest, "stars must be between 1 and 4");
  std::unique_lock lock(mutex_);
  const auto& s = session_locked(session_id);
  if (s.rater_id != rater_id) throw RatingError(RatingError::Kind::Forbidden, "session belongs to another rater");
  if (std::find(s.keys.begin(), s.keys.end(), key) == s.keys.end()) {
    throw RatingError(RatingError::Kind::NotFound, "unknown case key for this session");
  }
  RatingRecord r{session_id, rater_id, key, channel, stars, clock_()};
  append(json{{"type", "rating"},
              {"session_id", r.session_id},
              {"rater_id", r.rater_id},
              {"key", r.blinded_case_key},
              {"channel", std::string(to_string(r.channel))},
              {"stars", r.stars},
              {"timestamp", r.timestamp}}
             .dump());
  records_.push_back(r);
  return r;
}

void RatingStore::finalize(const std::string& session_id, const std::string& rater_id) {
  std::unique_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw RatingError(RatingError::Kind::NotFound, "unknown session");
  if (it->second.rater_id != rater_id) throw RatingError(RatingError::Kind::Forbidden, "session belongs to another rater");
  if (it->second.finalized) return;
  append(json{{"type", "finalize"}, {"session_id", session_id}}.dump());
  it->second.finalized = true;
}

std::optional<std::string> RatingStore::next_key(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto& s = session_locked(session_id);
  std::set<std::pair<std::string, Channel>> rated;
  for (const auto& r : records_) {
    if (r.rater_id == s.rater_id) rated.emplace(r.blinded_case_key, r.channel);
  }
  for (const auto& key : s.keys) {
    for (auto ch : kAllChannels) {
      if (!rated.count({key, ch})) return key;
    }
  }
  return std::nullopt;
}

std::map<Channel, int> RatingStore::current_ratings(const std::string& rater_id, const std::string& key) const {
  std::shared_lock lock(mutex_);
  std::map<Channel, int> out;
  for (const auto& r : records_) {
    if (r.rater_id == rater_id && r.blinded_case_key == key) out[r.channel] = r.stars;
  }
  return out;
}

bool RatingStore::rater_has_key(const std::string& rater_id, const std::string& key) const {
  std::shared_lock lock(mutex_);
  for (const auto& [_, s] : sessions_) {
    if (s.rater_id == rater_id && std::find(s.keys.begin(), s.keys.end(), key) != s.keys.end()) return true;
  }
  return false;
}

std::string RatingStore::case_for_key(const std::string& key) const {
  std::shared_lock lock(mutex_);
  auto it = key_to_case_.find(key);
  if (it == key_to_case_.end()) throw RatingError(RatingError::Kind::NotFound, "unknown case key");
  return it->second;
}

std::vector<RatingRecord> RatingStore::log() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::vector<RatingSummaryRow> RatingStore::summary(bool finalized_only) const {
  std::shared_lock lock(mutex_);
  if (!finalized_only) return summarize_ratings(records_);
  std::vector<RatingRecord> kept;
  for (const auto& r : records_) {
    if (session_locked(r.session_id).finalized) kept.push_back(r);
  }
  return summarize_ratings(kept);
}

std::vector<RatingStore::UnblindedRating> RatingStore::unblinded() const {
  std::shared_lock lock(mutex_);
  std::map<std::tuple<std::string, std::string, Channel>, const RatingRecord*> latest;
  for (const auto& r : records_) {
    if (session_locked(r.session_id).finalized) latest[{r.rater_id, r.blinded_case_key, r.channel}] = &r;
  }
  std::vector<UnblindedRating> out;
  for (const auto& [_, r] : latest) out.push_back({key_to_case_.at(r->blinded_case_key), *r});
  std::stable_sort(out.begin(), out.end(), [](const UnblindedRating& a, const UnblindedRating& b) {
    return std::tie(a.record.rater_id, a.case_id) < std::tie(b.record.rater_id, b.case_id);
  });
  return out;
}

}  // namespace pbtseg
