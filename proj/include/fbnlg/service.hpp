#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fbnlg/corpus.hpp"
#include "fbnlg/decode.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace fbnlg {

struct ServiceConfig {
  std::size_t max_context_turns = 10;
  std::chrono::seconds session_ttl{3600};
  DecodeConfig default_decode = service_decode_defaults();
  std::string checkpoint_id;
};

/// Which future a chat step bridges toward.
struct FutureArg {
  enum class Kind { Pending, Null, Text };
  Kind kind = Kind::Pending;
  std::string text;

  static FutureArg pending() { return {}; }
  static FutureArg null() { return {Kind::Null, {}}; }
  static FutureArg of(std::string t) { return {Kind::Text, std::move(t)}; }
};

struct HistoryEntry {
  Turn turn;
  /// For system turns: the future the turn was generated toward.
  std::optional<std::string> future;
};

struct SessionView {
  std::string id;
  std::vector<HistoryEntry> history;
  std::optional<std::string> pending_future;
  DecodeConfig decode;
};

struct ChatResult {
  std::string response;
  double rs_probability = 0.0;
  std::size_t turn_index = 0;  // 1-based index of the system turn
  std::optional<std::string> future;
  std::vector<TokenId> prefix;
};

class UnknownSession : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// In-memory session store over one shared, read-only model. Steps on one
/// session are serialized; distinct sessions run concurrently.
class ChatService {
 public:
  using Clock = std::chrono::steady_clock;

  ChatService(std::shared_ptr<const TransformerModel> model, ServiceConfig cfg = {});

  std::string create_session(std::optional<DecodeConfig> decode = std::nullopt);
  /// Throws UnknownSession.
  SessionView get(const std::string& id);
  bool remove(const std::string& id);
  SessionView set_pending_future(const std::string& id, std::optional<std::string> future);

  /// Appends the user turn and one generated system turn. A pending future
  /// is consumed by this step whatever `future` says. On error the session
  /// is left as it was.
  ChatResult chat_step(const std::string& id, const std::string& utterance, const FutureArg& future,
                       const std::optional<nlohmann::json>& decode_patch = std::nullopt);

  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t evict_expired(Clock::time_point now = Clock::now());
  std::size_t session_count();

  const TransformerModel& model() const noexcept { return *model_; }
  const ServiceConfig& config() const noexcept { return cfg_; }

 private:
  struct Session {
    std::mutex mu;
    std::string id;
    std::vector<HistoryEntry> history;
    std::optional<std::string> pending_future;
    DecodeConfig decode;
    Clock::time_point created;
    Clock::time_point updated;
  };

  std::shared_ptr<Session> find(const std::string& id);
  static SessionView view(const Session& s);

  std::shared_ptr<const TransformerModel> model_;
  ServiceConfig cfg_;
  std::mutex store_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_state_;
};

nlohmann::json to_json(const SessionView& v);

/// Registers the /v1 routes; with `static_dir`, also serves files from it.
void install_routes(httplib::Server& server, ChatService& service,
                    const std::optional<std::filesystem::path>& static_dir = std::nullopt);

}  // namespace fbnlg
