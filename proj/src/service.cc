#include "vidplat/service.h"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "vidplat/demo_studio.h"

namespace vidplat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kLogFile = "commands.jsonl";
constexpr const char* kSnapshotFile = "snapshot.json";

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos < path.size()) {
    size_t next = path.find('/', pos);
    if (next == std::string_view::npos) next = path.size();
    if (next > pos) out.emplace_back(path.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

std::string new_token() {
  std::random_device rd;
  std::ostringstream out;
  for (int i = 0; i < 4; ++i) {
    out << std::hex << std::setw(8) << std::setfill('0') << rd();
  }
  return out.str();
}

json error_body(const Error& e) {
  return {{"error", std::string(to_string(e.code()))}, {"message", e.what()}};
}

json demo_result_json(const DemoResult& r) {
  json out = {{"demo_key", r.demo_key}, {"n_valid", r.n_valid}};
  out["mos"] = r.mos ? json(*r.mos) : json(nullptr);
  out["se"] = r.se ? json(*r.se) : json(nullptr);
  out["ci90"] = r.ci90 ? json::array({r.ci90->first, r.ci90->second})
                       : json(nullptr);
  return out;
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) {
      throw Error(ErrorCode::kInternal, "cannot write '" + tmp.string() + "'");
    }
    out << text;
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string_view to_string(TaskPhase phase) {
  switch (phase) {
    case TaskPhase::kDraft: return "draft";
    case TaskPhase::kRecruiting: return "recruiting";
    case TaskPhase::kRunning: return "running";
    case TaskPhase::kComplete: return "complete";
    case TaskPhase::kAborted: return "aborted";
  }
  return "?";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return 400;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kFailedPrecondition: return 409;
    case ErrorCode::kResourceExhausted: return 429;
    case ErrorCode::kDataLoss:
    case ErrorCode::kInternal: return 500;
  }
  return 500;
}

class StudyService::TaskSink : public EventSink {
 public:
  TaskSink(StudyService* service, std::string task)
      : service_(service), task_(std::move(task)) {}

  void emit(double ts, const std::string& kind, json payload) override {
    payload["task"] = task_;
    service_->record(ts, kind, std::move(payload));
  }

 private:
  StudyService* service_;
  std::string task_;
};

struct StudyService::Task {
  std::string id;
  TaskConfig config;
  TaskPhase phase = TaskPhase::kDraft;
  double created_at = 0.0;
  int next_rater = 1;
  std::unique_ptr<TaskSink> sink;
  std::unique_ptr<Orchestrator> orch;
  std::map<std::string, std::string> assignment_rater;
};

StudyService::StudyService(ServiceOptions options)
    : options_(std::move(options)) {
  if (options_.snapshot_every < 1) options_.snapshot_every = 1;
  if (!options_.state_dir.empty()) {
    recover();
    expire_idle();  // assignments that timed out while the service was down
  }
}

StudyService::~StudyService() = default;

double StudyService::now() const {
  if (options_.clock) return options_.clock();
  const auto since = std::chrono::system_clock::now().time_since_epoch();
  return std::chrono::duration<double>(since).count();
}

// ---------------------------------------------------------------------------
// Logging and recovery

void StudyService::record(double ts, const std::string& kind, json payload) {
  if (replaying_ && replay_pos_ < replay_.size()) {
    const EventLogEntry& want = replay_[replay_pos_];
    if (want.kind != kind || want.payload != payload || want.ts != ts) {
      throw Error(ErrorCode::kDataLoss,
                  "replay diverged at sequence " + std::to_string(want.seq) +
                      ": log has '" + want.kind + "', replay produced '" +
                      kind + "'");
    }
    seq_ = want.seq;
    ++replay_pos_;
    return;
  }
  pending_.push_back(EventLogEntry{++seq_, ts, kind, std::move(payload)});
}

std::optional<json> StudyService::execute(const std::string& op, json args,
                                          double now) {
  const uint64_t seq_before = seq_;
  record(now, "command", {{"op", op}, {"args", args}});
  std::optional<json> result;
  try {
    result = dispatch(op, args, now);
  } catch (...) {
    pending_.clear();
    seq_ = seq_before;
    throw;
  }
  // Pure reads (an empty next, a resubmitted rating, a quiet watchdog
  // pass) leave no trace.
  if (pending_.size() == 1) {
    pending_.clear();
    seq_ = seq_before;
    return result;
  }
  if (writer_) {
    for (const EventLogEntry& e : pending_) writer_->append(e);
    writer_->flush();
  }
  pending_.clear();
  if (writer_ && ++commands_since_snapshot_ >= options_.snapshot_every) {
    write_snapshot();
  }
  return result;
}

std::optional<json> StudyService::dispatch(const std::string& op,
                                           const json& args, double now) {
  if (op == "create") return do_create(args, now);
  if (op == "activate") return do_activate(args, now);
  if (op == "join") return do_join(args, now);
  if (op == "training") return do_training(args, now);
  if (op == "next") return do_next(args, now);
  if (op == "submit") return do_submit(args, now);
  if (op == "expire") return do_expire(args, now);
  if (op == "abort") return do_abort(args, now);
  throw Error(ErrorCode::kDataLoss, "unknown command '" + op + "'");
}

void StudyService::write_snapshot() {
  commands_since_snapshot_ = 0;
  const json doc = {{"seq", seq_}, {"state", snapshot()}};
  write_atomically(fs::path(options_.state_dir) / kSnapshotFile, doc.dump());
}

void StudyService::recover() {
  const fs::path dir(options_.state_dir);
  fs::create_directories(dir);
  const fs::path log_path = dir / kLogFile;
  const fs::path snap_path = dir / kSnapshotFile;

  std::vector<EventLogEntry> entries;
  bool torn = false;
  if (fs::exists(log_path)) {
    entries = read_jsonl(log_path.string());
    std::ifstream in(log_path, std::ios::binary | std::ios::ate);
    const auto size = static_cast<std::streamoff>(in.tellg());
    if (size > 0) {
      in.seekg(size - 1);
      torn = in.get() != '\n';
    }
  }
  std::optional<json> snap;
  if (fs::exists(snap_path)) {
    std::ifstream in(snap_path, std::ios::binary);
    try {
      snap = json::parse(in);
    } catch (const json::exception&) {
      throw Error(ErrorCode::kDataLoss, "unreadable snapshot");
    }
    const uint64_t last = entries.empty() ? 0 : entries.back().seq;
    if (snap->value("seq", uint64_t{0}) > last) {
      throw Error(ErrorCode::kDataLoss,
                  "snapshot at sequence " + (*snap)["seq"].dump() +
                      " is ahead of the log (last sequence " +
                      std::to_string(last) + ")");
    }
  }

  replay_ = std::move(entries);
  replaying_ = true;
  replay_pos_ = 0;
  while (replay_pos_ < replay_.size()) {
    const EventLogEntry& e = replay_[replay_pos_];
    if (e.kind != "command") {
      throw Error(ErrorCode::kDataLoss, "expected a command at sequence " +
                                            std::to_string(e.seq));
    }
    const uint64_t at = e.seq;
    seq_ = at;
    ++replay_pos_;
    try {
      dispatch(e.payload.at("op").get<std::string>(), e.payload.at("args"),
               e.ts);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kDataLoss) throw;
      throw Error(ErrorCode::kDataLoss, "command at sequence " +
                                            std::to_string(at) +
                                            " failed on replay: " + err.what());
    } catch (const json::exception&) {
      throw Error(ErrorCode::kDataLoss,
                  "malformed command at sequence " + std::to_string(at));
    }
    if (snap && (*snap)["seq"].get<uint64_t>() == seq_ && pending_.empty() &&
        snapshot() != (*snap)["state"]) {
      throw Error(ErrorCode::kDataLoss, "snapshot at sequence " +
                                            std::to_string(seq_) +
                                            " does not match the replay");
    }
  }
  replaying_ = false;
  std::vector<EventLogEntry> kept = std::move(replay_);
  replay_.clear();

  // The last command may have been cut short: its remaining events are in
  // pending_. A torn line is dropped by rewriting the verified prefix.
  if (torn || !pending_.empty()) {
    kept.insert(kept.end(), pending_.begin(), pending_.end());
    pending_.clear();
    std::ostringstream text;
    for (const EventLogEntry& e : kept) text << encode_entry(e) << '\n';
    write_atomically(log_path, text.str());
  }
  writer_ = std::make_unique<JsonlWriter>(log_path.string());
}

// ---------------------------------------------------------------------------
// Lookups

StudyService::Task& StudyService::task(const std::string& id) {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown task '" + id + "'");
  }
  return *it->second;
}

const StudyService::Task& StudyService::task(const std::string& id) const {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown task '" + id + "'");
  }
  return *it->second;
}

StudyService::Task& StudyService::task_of_rater(const std::string& rater_id) {
  auto it = rater_task_.find(rater_id);
  if (it == rater_task_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown rater '" + rater_id + "'");
  }
  return task(it->second);
}

StudyService::Task& StudyService::task_of_assignment(
    const std::string& assignment_id) {
  // Assignment ids carry their task id as prefix: "<task>-a<n>".
  const size_t dash = assignment_id.rfind("-a");
  if (dash != std::string::npos) {
    auto it = tasks_.find(assignment_id.substr(0, dash));
    if (it != tasks_.end() &&
        it->second->assignment_rater.count(assignment_id) > 0) {
      return *it->second;
    }
  }
  throw Error(ErrorCode::kNotFound,
              "unknown assignment '" + assignment_id + "'");
}

void StudyService::check_token(const std::string& rater_id,
                               const std::string& authorization) const {
  auto it = tokens_.find(rater_id);
  const std::string expected =
      it == tokens_.end() ? std::string() : "Bearer " + it->second;
  if (expected.empty() || authorization != expected) {
    throw Error(ErrorCode::kFailedPrecondition, "unauthorized");
  }
}

// ---------------------------------------------------------------------------
// Commands

void StudyService::settle_phase(Task& t, double now) {
  if (t.phase != TaskPhase::kRecruiting && t.phase != TaskPhase::kRunning) {
    return;
  }
  if (!t.orch->is_complete()) return;
  t.phase = TaskPhase::kComplete;
  record(now, "task_complete",
         {{"task", t.id},
          {"valid_ratings", t.orch->valid_ratings()},
          {"budget_exhausted", t.orch->budget_exhausted()}});
}

json StudyService::do_create(const json& args, double now) {
  TaskConfig config = TaskConfig::from_json(args.at("config"));
  auto t = std::make_unique<Task>();
  t->id = "t" + std::to_string(tasks_.size() + 1);
  t->config = config;
  t->created_at = now;
  t->sink = std::make_unique<TaskSink>(this, t->id);
  t->orch = std::make_unique<Orchestrator>(config, t->sink.get(),
                                           UpdateMode::kImmediate, t->id + "-");
  const std::string id = t->id;
  tasks_.emplace(id, std::move(t));
  record(now, "task_created", {{"task", id}, {"config", config.to_json()}});
  return {{"task_id", id}, {"phase", "draft"}};
}

json StudyService::do_activate(const json& args, double now) {
  Task& t = task(args.at("task").get<std::string>());
  if (t.phase != TaskPhase::kDraft) {
    throw Error(ErrorCode::kConflict, "task " + t.id + " is " +
                                          std::string(to_string(t.phase)));
  }
  const DemandMap demand = t.orch->activate(now);
  t.phase = TaskPhase::kRecruiting;
  record(now, "phase_changed", {{"task", t.id}, {"phase", "recruiting"}});
  return {{"task_id", t.id},
          {"phase", "recruiting"},
          {"demos", demand.size()},
          {"ratings_demanded", demand.total()},
          {"recruitment_target", t.orch->recruitment_target()}};
}

json StudyService::do_join(const json& args, double now) {
  Task& t = task(args.at("task").get<std::string>());
  if (t.phase != TaskPhase::kRecruiting && t.phase != TaskPhase::kRunning) {
    throw Error(ErrorCode::kConflict, "task " + t.id + " is " +
                                          std::string(to_string(t.phase)) +
                                          ", not recruiting");
  }
  Attributes attributes;
  for (const auto& [k, v] : args.at("attributes").items()) {
    attributes[k] = v.get<std::string>();
  }
  const std::string rater_id = t.id + "-r" + std::to_string(t.next_rater++);
  const RaterProfile& p = t.orch->join(rater_id, attributes, now);
  rater_task_[rater_id] = t.id;
  json out = {{"rater_id", rater_id},
              {"task_id", t.id},
              {"state", std::string(to_string(p.state))}};
  if (p.state == RaterState::kRejected) {
    out["reasons"] = p.reasons;
    return out;
  }
  tokens_[rater_id] = args.at("token").get<std::string>();
  out["token"] = tokens_[rater_id];
  out["training"] = {
      {"instructions",
       "Watch each clip to the end, then rate its overall quality from 1 "
       "(bad) to 5 (excellent) and answer the questions about what you saw."},
      {"scale", {"bad", "poor", "fair", "good", "excellent"}}};
  return out;
}

json StudyService::do_training(const json& args, double now) {
  const std::string rater_id = args.at("rater").get<std::string>();
  Task& t = task_of_rater(rater_id);
  if (t.phase != TaskPhase::kRecruiting && t.phase != TaskPhase::kRunning) {
    throw Error(ErrorCode::kConflict, "task " + t.id + " is " +
                                          std::string(to_string(t.phase)));
  }
  t.orch->complete_training(rater_id, now);
  if (t.phase == TaskPhase::kRecruiting) {
    t.phase = TaskPhase::kRunning;
    record(now, "phase_changed", {{"task", t.id}, {"phase", "running"}});
  }
  return {{"rater_id", rater_id}, {"state", "active"}};
}

std::optional<json> StudyService::do_next(const json& args, double now) {
  const std::string rater_id = args.at("rater").get<std::string>();
  Task& t = task_of_rater(rater_id);
  if (t.phase == TaskPhase::kAborted) {
    throw Error(ErrorCode::kConflict, "task " + t.id + " was aborted");
  }
  if (t.phase == TaskPhase::kComplete) return std::nullopt;
  std::optional<IssuedAssignment> issued = t.orch->next(rater_id, now);
  if (!issued) return std::nullopt;
  const Assignment& a = issued->assignment;
  t.assignment_rater[a.id] = rater_id;
  json questions = json::array();
  for (const ControlQuestion& q : a.control_questions) {
    questions.push_back({{"id", q.id}, {"text", q.text}});
  }
  return json{{"assignment_id", a.id},
              {"task_id", t.id},
              {"rater_id", rater_id},
              {"demo_key", a.demo_key},
              {"issued_at", a.issued_at},
              {"control_questions", std::move(questions)},
              {"manifest", to_json(*issued->manifest)}};
}

json StudyService::do_submit(const json& args, double now) {
  const std::string id = args.at("assignment").get<std::string>();
  Task& t = task_of_assignment(id);
  std::vector<bool> answers;
  for (const json& a : args.at("control_answers")) answers.push_back(a.get<bool>());
  const SubmitResult r = t.orch->submit(
      id, args.at("score").get<int>(), args.at("watch_seconds").get<double>(),
      answers, now);
  settle_phase(t, now);
  return {{"assignment_id", id},
          {"verdict", std::string(to_string(r.verdict))},
          {"reason", r.reason},
          {"duplicate", r.duplicate},
          {"rater_released", r.rater_released}};
}

json StudyService::do_expire(const json&, double now) {
  int expired = 0;
  for (auto& [id, t] : tasks_) {
    if (t->phase != TaskPhase::kRunning) continue;
    expired += static_cast<int>(t->orch->expire_idle(now).size());
    settle_phase(*t, now);
  }
  return {{"expired", expired}};
}

json StudyService::do_abort(const json& args, double now) {
  Task& t = task(args.at("task").get<std::string>());
  if (t.phase == TaskPhase::kComplete || t.phase == TaskPhase::kAborted) {
    throw Error(ErrorCode::kConflict, "task " + t.id + " already " +
                                          std::string(to_string(t.phase)));
  }
  t.phase = TaskPhase::kAborted;
  record(now, "phase_changed", {{"task", t.id}, {"phase", "aborted"}});
  return {{"task_id", t.id}, {"phase", "aborted"}};
}

int StudyService::expire_idle() {
  std::lock_guard<std::mutex> lock(mu_);
  const std::optional<json> r = execute("expire", json::object(), now());
  return r ? r->value("expired", 0) : 0;
}

// ---------------------------------------------------------------------------
// Reads

json StudyService::snapshot() const {
  json tasks = json::object();
  for (const auto& [id, t] : tasks_) {
    tasks[id] = {{"phase", std::string(to_string(t->phase))},
                 {"created_at", t->created_at},
                 {"config", t->config.to_json()},
                 {"next_rater", t->next_rater},
                 {"assignments", t->assignment_rater},
                 {"orchestrator", t->orch->snapshot()}};
  }
  return {{"tasks", std::move(tasks)},
          {"raters", rater_task_},
          {"tokens", tokens_}};
}

uint64_t StudyService::last_seq() const {
  std::lock_guard<std::mutex> lock(mu_);
  return seq_;
}

int StudyService::slow_updates() const {
  std::lock_guard<std::mutex> lock(mu_);
  int n = 0;
  for (const auto& [id, t] : tasks_) n += t->orch->slow_updates();
  return n;
}

// ---------------------------------------------------------------------------
// Routing

ApiResponse StudyService::handle(std::string_view method, std::string_view path,
                                 const std::string& body,
                                 const std::string& authorization) {
  const std::vector<std::string> parts = split_path(path);
  auto parse_body = [&]() {
    if (body.empty()) return json::object();
    try {
      return json::parse(body);
    } catch (const json::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "request body is not JSON");
    }
  };
  auto route = [&](std::string_view m, std::initializer_list<const char*> shape) {
    if (m != method || parts.size() != shape.size()) return false;
    size_t i = 0;
    for (const char* s : shape) {
      if (std::string_view(s) != "*" && parts[i] != s) return false;
      ++i;
    }
    return true;
  };

  std::lock_guard<std::mutex> lock(mu_);
  const double t = now();
  try {
    if (route("POST", {"tasks"})) {
      return {201, *execute("create", {{"config", parse_body()}}, t), {}};
    }
    if (route("POST", {"tasks", "*", "activate"})) {
      return {200, *execute("activate", {{"task", parts[1]}}, t), {}};
    }
    if (route("POST", {"tasks", "*", "abort"})) {
      return {200, *execute("abort", {{"task", parts[1]}}, t), {}};
    }
    if (route("GET", {"tasks", "*"})) {
      const Task& k = task(parts[1]);
      const Orchestrator& o = *k.orch;
      return {200,
              {{"task_id", k.id},
               {"phase", std::string(to_string(k.phase))},
               {"created_at", k.created_at},
               {"config", k.config.to_json()},
               {"valid_ratings", o.valid_ratings()},
               {"demos", o.queue().entries().size()}},
              {}};
    }
    if (route("GET", {"tasks", "*", "results"})) {
      const Task& k = task(parts[1]);
      json demos = json::array();
      for (const DemoResult& r : k.orch->results()) {
        if (r.n_valid > 0) demos.push_back(demo_result_json(r));
      }
      return {200,
              {{"task_id", k.id},
               {"phase", std::string(to_string(k.phase))},
               {"demos", std::move(demos)}},
              {}};
    }
    if (route("GET", {"tasks", "*", "metrics"})) {
      const Task& k = task(parts[1]);
      const Orchestrator& o = *k.orch;
      json raters = json::object();
      for (RaterState s : {RaterState::kRecruited, RaterState::kTraining,
                           RaterState::kActive, RaterState::kReleased,
                           RaterState::kRejected}) {
        raters[std::string(to_string(s))] = o.raters().count(s);
      }
      return {200,
              {{"task_id", k.id},
               {"phase", std::string(to_string(k.phase))},
               {"valid_ratings", o.valid_ratings()},
               {"invalid_ratings", o.invalid_ratings()},
               {"expired_assignments", o.expired_assignments()},
               {"in_flight", o.queue().total_in_flight()},
               {"ratings_demanded", o.queue().total_demanded()},
               {"demos", o.queue().entries().size()},
               {"raters", std::move(raters)},
               {"recruitment_target", o.recruitment_target()},
               {"paid_hours", o.paid_seconds() / 3600.0},
               {"spend", o.spend()},
               {"budget_exhausted", o.budget_exhausted()},
               {"slow_generator_updates", o.slow_updates()}},
              {}};
    }
    if (route("POST", {"tasks", "*", "raters"})) {
      const json req = parse_body();
      json attributes = json::object();
      if (req.contains("attributes")) {
        if (!req["attributes"].is_object()) {
          throw Error(ErrorCode::kInvalidArgument,
                      "attributes: expected an object");
        }
        for (const auto& [k, v] : req["attributes"].items()) {
          if (v.is_object() || v.is_array() || v.is_null()) {
            throw Error(ErrorCode::kInvalidArgument,
                        "attributes." + k + ": expected a scalar");
          }
          attributes[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
      }
      json out = *execute("join",
                          {{"task", parts[1]},
                           {"attributes", attributes},
                           {"token", new_token()}},
                          t);
      return {out["state"] == "rejected" ? 403 : 201, out, {}};
    }
    if (route("POST", {"raters", "*", "training-complete"})) {
      check_token(parts[1], authorization);
      return {200, *execute("training", {{"rater", parts[1]}}, t), {}};
    }
    if (route("GET", {"raters", "*", "next-assignment"})) {
      check_token(parts[1], authorization);
      std::optional<json> out = execute("next", {{"rater", parts[1]}}, t);
      if (!out) {
        return {204,
                nullptr,
                {{"Retry-After", std::to_string(options_.retry_after_s)}}};
      }
      return {200, *out, {}};
    }
    if (route("POST", {"assignments", "*", "rating"})) {
      Task& k = task_of_assignment(parts[1]);
      check_token(k.assignment_rater.at(parts[1]), authorization);
      const json req = parse_body();
      if (!req.contains("score") || !req["score"].is_number_integer()) {
        throw Error(ErrorCode::kInvalidArgument, "score: expected an integer");
      }
      if (!req.contains("watch_seconds") || !req["watch_seconds"].is_number()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "watch_seconds: expected a number");
      }
      json answers = req.value("control_answers", json::array());
      if (!answers.is_array()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "control_answers: expected an array of booleans");
      }
      for (const json& a : answers) {
        if (!a.is_boolean()) {
          throw Error(ErrorCode::kInvalidArgument,
                      "control_answers: expected an array of booleans");
        }
      }
      return {200,
              *execute("submit",
                       {{"assignment", parts[1]},
                        {"score", req["score"]},
                        {"watch_seconds", req["watch_seconds"]},
                        {"control_answers", answers}},
                       t),
              {}};
    }
    throw Error(ErrorCode::kNotFound,
                "no route for " + std::string(method) + " " + std::string(path));
  } catch (const Error& e) {
    if (std::string_view(e.what()) == "unauthorized") {
      return {401, error_body(e), {}};
    }
    return {http_status(e.code()), error_body(e), {}};
  } catch (const json::exception& e) {
    return {400, {{"error", "invalid_argument"}, {"message", e.what()}}, {}};
  }
}

// ---------------------------------------------------------------------------
// HTTP

bool serve_http(StudyService& service, const std::string& host, int port,
                const std::atomic<bool>& stop, double tick_s,
                std::function<void(int)> on_listening) {
  httplib::Server server;
  auto adapt = [&service](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse r = service.handle(req.method, req.path, req.body,
                                         req.get_header_value("Authorization"));
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  server.Get(".*", adapt);
  server.Post(".*", adapt);

  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
    if (bound < 0) return false;
  } else if (!server.bind_to_port(host, port)) {
    return false;
  }

  std::thread watchdog([&] {
    auto last = std::chrono::steady_clock::now();
    while (!stop.load()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      const auto now = std::chrono::steady_clock::now();
      if (std::chrono::duration<double>(now - last).count() >= tick_s) {
        last = now;
        try {
          service.expire_idle();
        } catch (const Error&) {
          // Reported through metrics; the service keeps serving.
        }
      }
    }
    server.stop();
  });
  if (on_listening) on_listening(bound);
  server.listen_after_bind();
  watchdog.join();
  return true;
}

}  // namespace vidplat
