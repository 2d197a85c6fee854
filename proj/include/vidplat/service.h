#ifndef VIDPLAT_SERVICE_H_
#define VIDPLAT_SERVICE_H_

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidplat/event_log.h"
#include "vidplat/orchestrator.h"
#include "vidplat/task_config.h"

namespace vidplat {

enum class TaskPhase { kDraft, kRecruiting, kRunning, kComplete, kAborted };

std::string_view to_string(TaskPhase phase);

struct ServiceOptions {
  // Empty: in-memory only. Otherwise commands.jsonl and snapshot.json live
  // here and are replayed on start.
  std::string state_dir;
  int snapshot_every = 100;       // commands between snapshots
  int retry_after_s = 5;          // hint on 204 from next-assignment
  std::function<double()> clock;  // seconds; defaults to the system clock
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;  // null for 204
  std::map<std::string, std::string> headers;
};

// HTTP status for an error code.
int http_status(ErrorCode code);

// Researcher and rater endpoints over one orchestrator per task. Every
// mutation runs under a single lock and is logged as a command followed by
// the events it caused; recovery replays the commands and checks each
// logged event against what the replay produces.
class StudyService {
 public:
  // Recovers from options.state_dir. Throws kDataLoss (naming the sequence
  // number) when the log is corrupt or diverges on replay.
  explicit StudyService(ServiceOptions options = {});
  ~StudyService();

  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  // Routes one request. `authorization` is the raw Authorization header.
  ApiResponse handle(std::string_view method, std::string_view path,
                     const std::string& body,
                     const std::string& authorization = "");

  // Expires in-flight assignments past the idle timeout in every task.
  // Returns the number expired.
  int expire_idle();

  // Canonical state of every task; byte-equal across replay.
  nlohmann::json snapshot() const;
  uint64_t last_seq() const;
  int slow_updates() const;

 private:
  struct Task;
  class TaskSink;

  // Command bodies; all run with mu_ held and `now` taken from the command.
  nlohmann::json do_create(const nlohmann::json& args, double now);
  nlohmann::json do_activate(const nlohmann::json& args, double now);
  nlohmann::json do_join(const nlohmann::json& args, double now);
  nlohmann::json do_training(const nlohmann::json& args, double now);
  std::optional<nlohmann::json> do_next(const nlohmann::json& args,
                                        double now);
  nlohmann::json do_submit(const nlohmann::json& args, double now);
  nlohmann::json do_expire(const nlohmann::json& args, double now);
  nlohmann::json do_abort(const nlohmann::json& args, double now);

  // Runs a command and, unless replaying, logs it with its events.
  std::optional<nlohmann::json> execute(const std::string& op,
                                        nlohmann::json args, double now);
  std::optional<nlohmann::json> dispatch(const std::string& op,
                                         const nlohmann::json& args,
                                         double now);
  void record(double ts, const std::string& kind, nlohmann::json payload);
  void recover();
  void write_snapshot();
  void settle_phase(Task& task, double now);

  Task& task(const std::string& id);
  const Task& task(const std::string& id) const;
  Task& task_of_rater(const std::string& rater_id);
  Task& task_of_assignment(const std::string& assignment_id);
  void check_token(const std::string& rater_id,
                   const std::string& authorization) const;
  double now() const;

  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Task>> tasks_;
  std::map<std::string, std::string> rater_task_;
  std::map<std::string, std::string> tokens_;

  // Log state.
  std::unique_ptr<JsonlWriter> writer_;
  std::vector<EventLogEntry> pending_;
  std::vector<EventLogEntry> replay_;  // entries being verified
  size_t replay_pos_ = 0;
  bool replaying_ = false;
  uint64_t seq_ = 0;
  int commands_since_snapshot_ = 0;
};

// Serves `service` over HTTP until `stop` becomes true. Runs the idle
// watchdog every `tick_s` seconds. Returns false if the port cannot be bound.
bool serve_http(StudyService& service, const std::string& host, int port,
                const std::atomic<bool>& stop, double tick_s = 5.0,
                std::function<void(int)> on_listening = nullptr);

}  // namespace vidplat

#endif  // VIDPLAT_SERVICE_H_
