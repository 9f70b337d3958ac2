#include "pbtseg/server.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pbtseg/nifti.hpp"
#include "pbtseg/workflow.hpp"

namespace pbtseg {

namespace fs = std::filesystem;
using nlohmann::json;

struct RatingService::CaseData {
  LabelVolume labels;
  std::map<Sequence, IntensityVolume> images;
  std::map<Sequence, Window> windows;
};

std::map<std::string, std::string> read_token_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open token file " + path.string());
  std::map<std::string, std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string rater, token;
    if (!(ss >> rater)) continue;
    if (!(ss >> token)) throw std::runtime_error("token file line without a token for rater " + rater);
    tokens[token] = rater;
  }
  return tokens;
}

RatingService::RatingService(ServiceConfig config, RatingStore::Clock clock) : config_(std::move(config)) {
  const auto label_root = config_.label_root.value_or(config_.cohort_root);
  const auto ids = list_cases(label_root, config_.label_file);
  if (ids.empty()) throw std::runtime_error("no cases with " + config_.label_file + " under " + label_root.string());
  label_variant_ = "raw";
  const auto descrip = read_nifti_description(label_root / ids.front() / config_.label_file);
  if (descrip.starts_with("cc-filter")) label_variant_ = descrip;
  store_ = std::make_unique<RatingStore>(ids, config_.log_path, config_.key_salt, std::move(clock));
}

RatingService::~RatingService() = default;

std::shared_ptr<const RatingService::CaseData> RatingService::load_case(const std::string& case_id) {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(case_id); it != cache_.end()) return it->second;
  }
  const auto label_root = config_.label_root.value_or(config_.cohort_root);
  auto data = std::make_shared<CaseData>(CaseData{load_label_volume(label_root / case_id / config_.label_file), {}, {}});
  for (auto seq : kAllSequences) {
    const auto path = config_.cohort_root / case_id / (std::string(file_stem(seq)) + ".nii.gz");
    if (!fs::exists(path)) continue;
    auto img = load_intensity_volume(path, seq);
    require_compatible(img.geometry(), data->labels.geometry(), "sequence image vs labels");
    data->windows.emplace(seq, display_window(img));
    data->images.emplace(seq, std::move(img));
  }
  std::lock_guard lock(cache_mutex_);
  return cache_.emplace(case_id, std::move(data)).first->second;
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, json{{"error", message}}, status);
}

int status_for(RatingError::Kind kind) {
  switch (kind) {
    case RatingError::Kind::BadRequest: return 400;
    case RatingError::Kind::NotFound: return 404;
    case RatingError::Kind::Forbidden: return 403;
  }
  return 500;
}

}  // namespace

void RatingService::mount(httplib::Server& server) {
  // Resolves the caller or answers 401 and returns nullopt.
  auto authenticate = [this](const httplib::Request& req, httplib::Response& res) -> std::optional<std::string> {
    std::string token;
    const auto auth = req.get_header_value("Authorization");
    if (auth.starts_with("Bearer ")) {
      token = auth.substr(7);
    } else if (req.has_param("token")) {
      token = req.get_param_value("token");
    }
    auto it = config_.tokens.find(token);
    if (token.empty() || it == config_.tokens.end()) {
      send_error(res, 401, "missing or unknown rater token");
      return std::nullopt;
    }
    return it->second;
  };

  // Wraps a handler so domain errors map onto HTTP status codes.
  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const RatingError& e) {
        send_error(res, status_for(e.kind()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, std::string("malformed JSON: ") + e.what());
      } catch (const std::invalid_argument& e) {
        send_error(res, 400, e.what());
      } catch (const std::out_of_range& e) {
        send_error(res, 404, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal error");
      }
    };
  };

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"ok", true}}); });

  server.Get("/scale", [](const httplib::Request&, httplib::Response& res) {
    json stars = json::array();
    for (std::size_t i = 0; i < kStarRubric.size(); ++i) {
      stars.push_back({{"stars", i + 1}, {"description", std::string(kStarRubric[i])}});
    }
    send_json(res, {{"scale", stars}});
  });

  server.Post("/sessions", guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
                const auto rater = authenticate(req, res);
                if (!rater) return;
                const auto body = req.body.empty() ? json::object() : json::parse(req.body);
                const auto requested = body.value("rater_id", *rater);
                if (requested != *rater) throw RatingError(RatingError::Kind::Forbidden, "token does not match rater_id");
                std::uint64_t seed = 0;
                if (body.contains("seed")) {
                  seed = body.at("seed").get<std::uint64_t>();
                } else if (config_.default_seed) {
                  seed = *config_.default_seed;
                } else {
                  throw RatingError(RatingError::Kind::BadRequest, "seed is required");
                }
                const auto s = store_->create_session(*rater, seed);
                send_json(res,
                          {{"session_id", s.session_id},
                           {"rater_id", s.rater_id},
                           {"seed", s.seed},
                           {"total", s.keys.size()},
                           {"keys", s.keys}},
                          201);
              }));

  server.Get(R"(/sessions/([A-Za-z0-9_-]+))",
             guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
               const auto rater = authenticate(req, res);
               if (!rater) return;
               const auto s = store_->session(req.matches[1]);
               if (s.rater_id != *rater) throw RatingError(RatingError::Kind::Forbidden, "not your session");
               std::size_t complete = 0;
               for (const auto& key : s.keys) complete += store_->current_ratings(*rater, key).size() == 3;
               send_json(res, {{"session_id", s.session_id},
                               {"total", s.keys.size()},
                               {"completed", complete},
                               {"remaining", s.keys.size() - complete},
                               {"finalized", s.finalized}});
             }));

  server.Get(R"(/sessions/([A-Za-z0-9_-]+)/next)",
             guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
               const auto rater = authenticate(req, res);
               if (!rater) return;
               const auto s = store_->session(req.matches[1]);
               if (s.rater_id != *rater) throw RatingError(RatingError::Kind::Forbidden, "not your session");
               const auto key = store_->next_key(s.session_id);
               if (!key) {
                 send_json(res, {{"done", true}, {"total", s.keys.size()}, {"remaining", 0}});
                 return;
               }
               const auto pos = static_cast<std::size_t>(std::find(s.keys.begin(), s.keys.end(), *key) - s.keys.begin());
               const auto data = load_case(store_->case_for_key(*key));
               const auto& g = data->labels.geometry();
               json sequences = json::array();
               for (auto seq : kAllSequences) {
                 if (data->images.count(seq)) sequences.push_back(std::string(to_string(seq)));
               }
               json current = json::object();
               for (const auto& [ch, stars] : store_->current_ratings(*rater, *key)) {
                 current[std::string(to_string(ch))] = stars;
               }
               std::size_t remaining = 0;
               for (const auto& k : s.keys) remaining += store_->current_ratings(*rater, k).size() < 3;
               send_json(res, {{"done", false},
                               {"blinded_case_key", *key},
                               {"position", pos},
                               {"total", s.keys.size()},
                               {"remaining", remaining},
                               {"slice_counts",
                                {{"axial", slice_count(g, SliceAxis::Axial)},
                                 {"coronal", slice_count(g, SliceAxis::Coronal)},
                                 {"sagittal", slice_count(g, SliceAxis::Sagittal)}}},
                               {"sequences", sequences},
                               {"channels", {"T2H", "ET", "CC"}},
                               {"ratings", current}});
             }));

  server.Post(R"(/sessions/([A-Za-z0-9_-]+)/finalize)",
              guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
                const auto rater = authenticate(req, res);
                if (!rater) return;
                store_->finalize(req.matches[1], *rater);
                send_json(res, {{"session_id", std::string(req.matches[1])}, {"finalized", true}});
              }));

  server.Get(R"(/cases/([0-9a-f]+)/slice)",
             guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
               const auto rater = authenticate(req, res);
               if (!rater) return;
               const std::string key = req.matches[1];
               if (!store_->rater_has_key(*rater, key)) throw RatingError(RatingError::Kind::NotFound, "unknown case key");
               const auto data = load_case(store_->case_for_key(key));
               const auto seq = parse_sequence(req.has_param("seq") ? req.get_param_value("seq") : "T1-C");
               const auto axis = parse_slice_axis(req.has_param("axis") ? req.get_param_value("axis") : "axial");
               auto img = data->images.find(seq);
               if (img == data->images.end()) throw RatingError(RatingError::Kind::NotFound, "sequence not available");
               if (!req.has_param("i")) throw RatingError(RatingError::Kind::BadRequest, "slice index i is required");
               const auto index_text = req.get_param_value("i");
               std::size_t index = 0;
               try {
                 std::size_t used = 0;
                 const auto v = std::stoll(index_text, &used);
                 if (used != index_text.size() || v < 0) throw std::invalid_argument("");
                 index = static_cast<std::size_t>(v);
               } catch (const std::exception&) {
                 throw RatingError(RatingError::Kind::BadRequest, "slice index must be a non-negative integer");
               }
               if (index >= slice_count(data->labels.geometry(), axis)) {
                 throw RatingError(RatingError::Kind::BadRequest, "slice index out of range");
               }
               const auto overlays =
                   parse_channel_list(req.has_param("overlay") ? req.get_param_value("overlay") : std::string());
               const auto image = render_slice(img->second, data->windows.at(seq), data->labels, axis, index, overlays);
               const auto png = encode_png(image);
               res.status = 200;
               res.set_content(std::string(png.begin(), png.end()), "image/png");
             }));

  server.Post("/ratings", guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
                const auto rater = authenticate(req, res);
                if (!rater) return;
                const auto body = json::parse(req.body);
                const auto stars_json = body.at("stars");
                if (!stars_json.is_number_integer()) throw RatingError(RatingError::Kind::BadRequest, "stars must be an integer");
                const auto before = store_->current_ratings(*rater, body.at("key").get<std::string>());
                const auto channel = parse_channel(body.at("channel").get<std::string>());
                const auto r = store_->submit(body.at("session_id").get<std::string>(), *rater,
                                              body.at("key").get<std::string>(), channel, stars_json.get<int>());
                send_json(res,
                          {{"ok", true},
                           {"session_id", r.session_id},
                           {"key", r.blinded_case_key},
                           {"channel", std::string(to_string(r.channel))},
                           {"stars", r.stars},
                           {"timestamp", r.timestamp},
                           {"superseded", before.count(channel) > 0}},
                          201);
              }));

  server.Get("/summary", guarded([this, authenticate](const httplib::Request& req, httplib::Response& res) {
               const auto rater = authenticate(req, res);
               if (!rater) return;
               const bool finalized_only = req.has_param("finalized") && req.get_param_value("finalized") == "true";
               json rows = json::array();
               for (const auto& r : store_->summary(finalized_only)) {
                 rows.push_back({{"rater_id", r.rater_id},
                                 {"channel", std::string(to_string(r.channel))},
                                 {"n", r.n},
                                 {"mean", r.mean ? json(*r.mean) : json(nullptr)},
                                 {"sd", r.sd ? json(*r.sd) : json(nullptr)},
                                 {"histogram", r.histogram}});
               }
               send_json(res, {{"finalized_only", finalized_only}, {"label_variant", label_variant_}, {"rows", rows}});
             }));
}

}  // namespace pbtseg
