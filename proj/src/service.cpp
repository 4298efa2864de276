#include "fbnlg/service.hpp"

#include <random>

#include "fbnlg/error.hpp"
#include "fbnlg/json_io.hpp"
#include "fbnlg/random.hpp"
#include "httplib.h"

namespace fbnlg {

using nlohmann::json;

namespace {

std::string trimmed(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

json opt_text(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

}  // namespace

ChatService::ChatService(std::shared_ptr<const TransformerModel> model, ServiceConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)), id_state_(std::random_device{}()) {
  if (!model_) throw ValidationError("service: no model");
  if (cfg_.max_context_turns < 1) throw ValidationError("service: max_context_turns must be >= 1");
  validate(cfg_.default_decode);
  id_state_ = (id_state_ << 32) ^ static_cast<std::uint64_t>(Clock::now().time_since_epoch().count());
}

std::string ChatService::create_session(std::optional<DecodeConfig> decode) {
  auto s = std::make_shared<Session>();
  s->decode = decode.value_or(cfg_.default_decode);
  validate(s->decode);
  s->created = s->updated = Clock::now();
  std::lock_guard lock(store_mu_);
  do {
    char buf[33];
    const std::uint64_t a = splitmix64(++id_state_);
    const std::uint64_t b = splitmix64(a ^ ++id_state_);
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(a),
                  static_cast<unsigned long long>(b));
    s->id = buf;
  } while (sessions_.count(s->id));
  sessions_.emplace(s->id, s);
  return s->id;
}

std::shared_ptr<ChatService::Session> ChatService::find(const std::string& id) {
  evict_expired();
  std::lock_guard lock(store_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw UnknownSession("unknown session " + id);
  return it->second;
}

SessionView ChatService::view(const Session& s) { return {s.id, s.history, s.pending_future, s.decode}; }

SessionView ChatService::get(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return view(*s);
}

bool ChatService::remove(const std::string& id) {
  std::lock_guard lock(store_mu_);
  return sessions_.erase(id) > 0;
}

SessionView ChatService::set_pending_future(const std::string& id, std::optional<std::string> future) {
  if (future) {
    *future = trimmed(*future);
    if (future->empty()) throw ValidationError("future must be non-empty text or null");
  }
  auto s = find(id);
  std::lock_guard lock(s->mu);
  s->pending_future = std::move(future);
  s->updated = Clock::now();
  return view(*s);
}

ChatResult ChatService::chat_step(const std::string& id, const std::string& utterance, const FutureArg& future,
                                  const std::optional<json>& decode_patch) {
  const std::string text = trimmed(utterance);
  if (text.empty()) throw ValidationError("utterance must be non-empty");
  if (future.kind == FutureArg::Kind::Text && trimmed(future.text).empty())
    throw ValidationError("future must be non-empty text or null");

  auto s = find(id);
  std::lock_guard lock(s->mu);
  const DecodeConfig cfg = decode_patch ? decode_config_from_json(*decode_patch, s->decode) : s->decode;

  std::optional<std::string> fut;
  switch (future.kind) {
    case FutureArg::Kind::Pending:
      fut = s->pending_future;
      break;
    case FutureArg::Kind::Null:
      break;
    case FutureArg::Kind::Text:
      fut = trimmed(future.text);
      break;
  }

  std::vector<Turn> context;
  for (const auto& h : s->history) context.push_back(h.turn);
  context.push_back({SpeakerRole::User, text});
  if (context.size() > cfg_.max_context_turns)
    context.erase(context.begin(), context.end() - static_cast<std::ptrdiff_t>(cfg_.max_context_turns));

  Generation g;
  try {
    g = generate_response(model_->params(), model_->vocab(), context, fut, cfg);
  } catch (const WindowError& e) {
    throw WindowError(std::string(e.what()) + "; reset the session or send a shorter utterance");
  }
  const auto score = model_->score(context, fut, g.text);

  s->history.push_back({{SpeakerRole::User, text}, std::nullopt});
  s->history.push_back({{SpeakerRole::System, g.text}, fut});
  s->pending_future.reset();
  s->updated = Clock::now();

  ChatResult r;
  r.response = g.text;
  r.rs_probability = score.rs_probability;
  r.turn_index = s->history.size() / 2;
  r.future = fut;
  r.prefix = std::move(g.prefix);
  return r;
}

std::size_t ChatService::evict_expired(Clock::time_point now) {
  std::lock_guard lock(store_mu_);
  std::size_t n = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock slock(it->second->mu, std::try_to_lock);
    // A session busy in a chat step is in use, so not idle.
    if (slock.owns_lock() && now - it->second->updated > cfg_.session_ttl) {
      slock.unlock();
      it = sessions_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

std::size_t ChatService::session_count() {
  std::lock_guard lock(store_mu_);
  return sessions_.size();
}

json to_json(const SessionView& v) {
  json hist = json::array();
  for (const auto& h : v.history) {
    json t{{"speaker", to_string(h.turn.speaker)}, {"text", h.turn.text}};
    if (h.turn.speaker == SpeakerRole::System) t["future"] = opt_text(h.future);
    hist.push_back(std::move(t));
  }
  return {{"session_id", v.id}, {"history", hist}, {"pending_future", opt_text(v.pending_future)},
          {"decode", to_json(v.decode)}};
}

// ---------------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void fail(httplib::Response& res, int status, const std::string& msg) { reply(res, status, {{"error", msg}}); }

/// Runs `f`, mapping library errors onto HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const UnknownSession& e) {
    fail(res, 404, e.what());
  } catch (const WindowError& e) {
    fail(res, 422, e.what());
  } catch (const json::exception& e) {
    fail(res, 400, std::string("malformed body: ") + e.what());
  } catch (const ValidationError& e) {
    fail(res, 400, e.what());
  } catch (const std::exception& e) {
    fail(res, 500, e.what());
  }
}

json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty() && allow_empty) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw ValidationError("body must be an object");
  return j;
}

}  // namespace

void install_routes(httplib::Server& server, ChatService& service, const std::optional<std::filesystem::path>& static_dir) {
  server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

  server.Get("/v1/model", [&service](const httplib::Request&, httplib::Response& res) {
    reply(res, 200,
          {{"model", to_json(service.model().params().config)},
           {"vocab_size", service.model().vocab().size()},
           {"checkpoint_id", service.config().checkpoint_id}});
  });

  server.Post("/v1/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req, true);
      for (auto it = body.begin(); it != body.end(); ++it)
        if (it.key() != "decode") throw ValidationError("unknown key '" + it.key() + "'");
      std::optional<DecodeConfig> decode;
      if (body.contains("decode")) decode = decode_config_from_json(body["decode"], service.config().default_decode);
      reply(res, 201, {{"session_id", service.create_session(decode)}});
    });
  });

  server.Get(R"(/v1/sessions/([0-9a-zA-Z_-]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, to_json(service.get(req.matches[1]))); });
  });

  server.Delete(R"(/v1/sessions/([0-9a-zA-Z_-]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    if (service.remove(req.matches[1])) {
      res.status = 204;
    } else {
      fail(res, 404, "unknown session " + std::string(req.matches[1]));
    }
  });

  server.Put(R"(/v1/sessions/([0-9a-zA-Z_-]+)/future)", [&service](const httplib::Request& req,
                                                                   httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req, false);
      if (!body.contains("future") || !(body["future"].is_null() || body["future"].is_string()))
        throw ValidationError("'future' must be a string or null");
      std::optional<std::string> fut;
      if (body["future"].is_string()) fut = body["future"].get<std::string>();
      reply(res, 200, to_json(service.set_pending_future(req.matches[1], fut)));
    });
  });

  server.Post(R"(/v1/sessions/([0-9a-zA-Z_-]+)/turns)", [&service](const httplib::Request& req,
                                                                   httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req, false);
      for (auto it = body.begin(); it != body.end(); ++it)
        if (it.key() != "utterance" && it.key() != "future" && it.key() != "decode")
          throw ValidationError("unknown key '" + it.key() + "'");
      if (!body.contains("utterance") || !body["utterance"].is_string())
        throw ValidationError("'utterance' must be a string");
      FutureArg fut;
      if (auto it = body.find("future"); it != body.end()) {
        if (it->is_null()) fut = FutureArg::null();
        else if (it->is_string()) fut = FutureArg::of(it->get<std::string>());
        else throw ValidationError("'future' must be a string or null");
      }
      std::optional<json> patch;
      if (auto it = body.find("decode"); it != body.end()) patch = *it;
      const auto r = service.chat_step(req.matches[1], body["utterance"].get<std::string>(), fut, patch);
      reply(res, 200,
            {{"response", r.response},
             {"rs_probability", r.rs_probability},
             {"turn_index", r.turn_index},
             {"future", opt_text(r.future)}});
    });
  });

  if (static_dir && !server.set_mount_point("/", static_dir->string()))
    throw ValidationError("service: cannot serve static files from " + static_dir->string());
}

}  // namespace fbnlg
