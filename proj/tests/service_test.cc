#include "vidplat/service.h"

#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "httplib.h"

namespace vidplat {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json ConfigDoc(int fatigue = 40) {
  return {{"source", {{"id", "v1"}, {"duration", 16}, {"chunk_length", 4}}},
          {"generator", {{"name", "buffering_stall"}, {"params", json::object()}}},
          {"budget_ratings", 1000},
          {"fatigue_cap", fatigue},
          {"per_source_cap", fatigue},
          {"seed", 7}};
}

std::string FreshDir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "vidplat_service_test" / name;
  fs::remove_all(dir);
  return dir.string();
}

struct Client {
  StudyService& svc;

  ApiResponse Call(const std::string& method, const std::string& path,
                   const json& body = nullptr, const std::string& auth = "") {
    return svc.handle(method, path, body.is_null() ? "" : body.dump(), auth);
  }

  std::string CreateAndActivate(int fatigue = 40) {
    ApiResponse r = Call("POST", "/tasks", ConfigDoc(fatigue));
    EXPECT_EQ(r.status, 201);
    const std::string id = r.body["task_id"];
    EXPECT_EQ(Call("POST", "/tasks/" + id + "/activate").status, 200);
    return id;
  }

  // Joins and trains a rater; returns {rater_id, bearer}.
  std::pair<std::string, std::string> Rater(const std::string& task) {
    ApiResponse r = Call("POST", "/tasks/" + task + "/raters",
                         {{"attributes", json::object()}});
    EXPECT_EQ(r.status, 201);
    const std::string id = r.body["rater_id"];
    const std::string auth = "Bearer " + r.body["token"].get<std::string>();
    EXPECT_EQ(Call("POST", "/raters/" + id + "/training-complete", nullptr, auth)
                  .status,
              200);
    return {id, auth};
  }

  static json Honest(const json& assignment, int score) {
    json answers = json::array();
    const Demo demo =
        parse_demo_key(assignment["demo_key"].get<std::string>());
    for (const auto& q : derive_control_questions(demo)) {
      answers.push_back(q.expected);
    }
    return {{"score", score},
            {"watch_seconds",
             assignment["manifest"]["total_wall_duration"].get<double>()},
            {"control_answers", answers}};
  }

  // Rates everything offered to the rater; returns the number of ratings.
  int Drain(const std::pair<std::string, std::string>& rater, int score) {
    int n = 0;
    while (true) {
      ApiResponse next = Call("GET", "/raters/" + rater.first + "/next-assignment",
                              nullptr, rater.second);
      if (next.status == 204) return n;
      EXPECT_EQ(next.status, 200);
      ApiResponse done = Call(
          "POST", "/assignments/" + next.body["assignment_id"].get<std::string>() +
                      "/rating",
          Honest(next.body, score), rater.second);
      EXPECT_EQ(done.status, 200);
      ++n;
    }
  }
};

double g_clock = 1000.0;
ServiceOptions Options(const std::string& dir = "", int snapshot_every = 100) {
  ServiceOptions o;
  o.state_dir = dir;
  o.snapshot_every = snapshot_every;
  o.clock = [] { return g_clock; };
  return o;
}

TEST(Service, HappyPathToCompletion) {
  StudyService svc(Options());
  Client c{svc};
  const std::string task = c.CreateAndActivate();
  EXPECT_EQ(c.Call("GET", "/tasks/" + task).body["phase"], "recruiting");
  for (int i = 0; i < 10; ++i) {
    c.Drain(c.Rater(task), 4);
    if (c.Call("GET", "/tasks/" + task).body["phase"] == "complete") break;
  }
  ApiResponse t = c.Call("GET", "/tasks/" + task);
  EXPECT_EQ(t.body["phase"], "complete");
  ApiResponse results = c.Call("GET", "/tasks/" + task + "/results");
  ASSERT_EQ(results.status, 200);
  ASSERT_EQ(results.body["demos"].size(), 4u);
  for (const auto& d : results.body["demos"]) {
    EXPECT_EQ(d["n_valid"], 3);
    EXPECT_DOUBLE_EQ(d["mos"].get<double>(), 4.0);
    EXPECT_DOUBLE_EQ(d["se"].get<double>(), 0.0);
  }
  ApiResponse m = c.Call("GET", "/tasks/" + task + "/metrics");
  EXPECT_EQ(m.body["valid_ratings"], 12);
  EXPECT_EQ(m.body["in_flight"], 0);
}

TEST(Service, InvalidRatingRestoresDemand) {
  StudyService svc(Options());
  Client c{svc};
  const std::string task = c.CreateAndActivate();
  auto rater = c.Rater(task);
  const int before =
      c.Call("GET", "/tasks/" + task + "/metrics").body["ratings_demanded"];
  ApiResponse next = c.Call("GET", "/raters/" + rater.first + "/next-assignment",
                            nullptr, rater.second);
  ASSERT_EQ(next.status, 200);
  json bad = Client::Honest(next.body, 3);
  bad["watch_seconds"] = 1.0;
  ApiResponse r = c.Call(
      "POST", "/assignments/" + next.body["assignment_id"].get<std::string>() +
                  "/rating",
      bad, rater.second);
  EXPECT_EQ(r.body["verdict"], "invalid");
  EXPECT_EQ(r.body["reason"], "partial_watch");
  ApiResponse m = c.Call("GET", "/tasks/" + task + "/metrics");
  EXPECT_EQ(m.body["ratings_demanded"], before);
  EXPECT_EQ(m.body["invalid_ratings"], 1);
  EXPECT_EQ(m.body["valid_ratings"], 0);
}

TEST(Service, FatigueCapGives204WithRetryAfter) {
  StudyService svc(Options());
  Client c{svc};
  const std::string task = c.CreateAndActivate(1);
  auto rater = c.Rater(task);
  EXPECT_EQ(c.Drain(rater, 4), 1);
  ApiResponse again = c.Call("GET", "/raters/" + rater.first + "/next-assignment",
                             nullptr, rater.second);
  EXPECT_EQ(again.status, 204);
  EXPECT_EQ(again.headers.at("Retry-After"), "5");
}

TEST(Service, DuplicateSubmitIsIdempotent) {
  StudyService svc(Options());
  Client c{svc};
  const std::string task = c.CreateAndActivate();
  auto rater = c.Rater(task);
  ApiResponse next = c.Call("GET", "/raters/" + rater.first + "/next-assignment",
                            nullptr, rater.second);
  const std::string path =
      "/assignments/" + next.body["assignment_id"].get<std::string>() + "/rating";
  ApiResponse first = c.Call("POST", path, Client::Honest(next.body, 4), rater.second);
  const uint64_t seq = svc.last_seq();
  ApiResponse second = c.Call("POST", path, Client::Honest(next.body, 1), rater.second);
  EXPECT_EQ(second.status, 200);
  EXPECT_FALSE(first.body["duplicate"].get<bool>());
  EXPECT_TRUE(second.body["duplicate"].get<bool>());
  EXPECT_EQ(second.body["verdict"], first.body["verdict"]);
  EXPECT_EQ(svc.last_seq(), seq);
  EXPECT_EQ(c.Call("GET", "/tasks/" + task + "/metrics").body["valid_ratings"], 1);
}

TEST(Service, ErrorStatuses) {
  StudyService svc(Options());
  Client c{svc};
  EXPECT_EQ(c.Call("GET", "/tasks/t9").status, 404);
  EXPECT_EQ(svc.handle("POST", "/tasks", "{not json").status, 400);
  json bad = ConfigDoc();
  bad["fatigue_cap"] = 0;
  ApiResponse r = c.Call("POST", "/tasks", bad);
  EXPECT_EQ(r.status, 400);
  EXPECT_NE(r.body["message"].get<std::string>().find("fatigue_cap"),
            std::string::npos);
  const std::string task = c.CreateAndActivate();
  EXPECT_EQ(c.Call("POST", "/tasks/" + task + "/activate").status, 409);
  auto rater = c.Rater(task);
  EXPECT_EQ(c.Call("GET", "/raters/" + rater.first + "/next-assignment", nullptr,
                   "Bearer wrong")
                .status,
            401);
  EXPECT_EQ(c.Call("DELETE", "/tasks/" + task).status, 404);
  EXPECT_EQ(c.Call("POST", "/assignments/t1-a999/rating",
                   {{"score", 3}, {"watch_seconds", 1}}, rater.second)
                .status,
            404);
}

TEST(Service, IneligibleRaterIsRejected) {
  StudyService svc(Options());
  Client c{svc};
  json doc = ConfigDoc();
  doc["eligibility"] = {{"min_acceptance_rate", "0.99"}};
  const std::string task = c.Call("POST", "/tasks", doc).body["task_id"];
  c.Call("POST", "/tasks/" + task + "/activate");
  ApiResponse r = c.Call("POST", "/tasks/" + task + "/raters",
                         {{"attributes", {{"acceptance_rate", "0.95"}}}});
  EXPECT_EQ(r.status, 403);
  EXPECT_EQ(r.body["state"], "rejected");
}

TEST(Service, IdleWatchdogExpiresAndRestores) {
  g_clock = 1000;
  StudyService svc(Options());
  Client c{svc};
  const std::string task = c.CreateAndActivate();
  auto rater = c.Rater(task);
  ASSERT_EQ(c.Call("GET", "/raters/" + rater.first + "/next-assignment", nullptr,
                   rater.second)
                .status,
            200);
  EXPECT_EQ(svc.expire_idle(), 0);
  g_clock += 601;
  EXPECT_EQ(svc.expire_idle(), 1);
  ApiResponse m = c.Call("GET", "/tasks/" + task + "/metrics");
  EXPECT_EQ(m.body["expired_assignments"], 1);
  EXPECT_EQ(m.body["in_flight"], 0);
  g_clock = 1000;
}

TEST(Service, AbortStopsTask) {
  StudyService svc(Options());
  Client c{svc};
  const std::string task = c.CreateAndActivate();
  EXPECT_EQ(c.Call("POST", "/tasks/" + task + "/abort").body["phase"], "aborted");
  EXPECT_EQ(c.Call("POST", "/tasks/" + task + "/raters",
                   {{"attributes", json::object()}})
                .status,
            409);
}

// Runs a workload that leaves work in flight.
void Workload(StudyService& svc) {
  Client c{svc};
  const std::string task = c.CreateAndActivate();
  auto r1 = c.Rater(task);
  c.Drain(r1, 3);
  auto r2 = c.Rater(task);
  c.Call("GET", "/raters/" + r2.first + "/next-assignment", nullptr, r2.second);
}

TEST(Recovery, ReplayReproducesState) {
  const std::string dir = FreshDir("replay");
  json before;
  uint64_t seq = 0;
  {
    StudyService svc(Options(dir, 3));
    Workload(svc);
    before = svc.snapshot();
    seq = svc.last_seq();
  }
  StudyService again(Options(dir, 3));
  EXPECT_EQ(again.snapshot().dump(), before.dump());
  EXPECT_EQ(again.last_seq(), seq);
  // The recovered service keeps going.
  Client c{again};
  auto r3 = c.Rater("t1");
  c.Drain(r3, 3);
  EXPECT_GT(again.last_seq(), seq);
}

TEST(Recovery, TornTailIsDropped) {
  const std::string dir = FreshDir("torn");
  json before;
  {
    StudyService svc(Options(dir));
    Workload(svc);
    before = svc.snapshot();
  }
  {
    std::ofstream out(fs::path(dir) / "commands.jsonl", std::ios::app);
    out << "{\"seq\":99999,\"ts\":1,\"kind\":\"comm";
  }
  StudyService again(Options(dir));
  EXPECT_EQ(again.snapshot().dump(), before.dump());
  StudyService third(Options(dir));
  EXPECT_EQ(third.snapshot().dump(), before.dump());
}

TEST(Recovery, CorruptionIsDataLoss) {
  const std::string dir = FreshDir("corrupt");
  {
    StudyService svc(Options(dir));
    Workload(svc);
  }
  const fs::path log = fs::path(dir) / "commands.jsonl";
  std::ifstream in(log);
  std::stringstream text;
  text << in.rdbuf();
  std::string body = text.str();
  const size_t at = body.find("\"rater_joined\"");
  ASSERT_NE(at, std::string::npos);
  body.replace(at, 14, "\"rater_JOINED\"");
  {
    std::ofstream out(log, std::ios::trunc);
    out << body;
  }
  try {
    StudyService broken(Options(dir));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDataLoss);
    EXPECT_NE(std::string(e.what()).find("sequence"), std::string::npos);
  }
}

TEST(Recovery, SnapshotAheadOfLogIsDataLoss) {
  const std::string dir = FreshDir("ahead");
  {
    StudyService svc(Options(dir, 1));
    Workload(svc);
  }
  std::ofstream(fs::path(dir) / "commands.jsonl", std::ios::trunc);
  EXPECT_THROW(StudyService(Options(dir)), Error);
}

TEST(Http, ServesOverLoopback) {
  StudyService svc(Options());
  std::atomic<bool> stop{false};
  std::promise<int> port_promise;
  std::thread server([&] {
    serve_http(svc, "127.0.0.1", 0, stop, 0.1,
               [&](int port) { port_promise.set_value(port); });
  });
  const int port = port_promise.get_future().get();
  httplib::Client cli("127.0.0.1", port);
  auto created = cli.Post("/tasks", ConfigDoc().dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const std::string task = json::parse(created->body)["task_id"];
  ASSERT_EQ(cli.Post("/tasks/" + task + "/activate", "", "application/json")->status,
            200);
  auto joined = cli.Post("/tasks/" + task + "/raters", "{}", "application/json");
  ASSERT_EQ(joined->status, 201);
  const json rater = json::parse(joined->body);
  httplib::Headers auth = {
      {"Authorization", "Bearer " + rater["token"].get<std::string>()}};
  const std::string rid = rater["rater_id"];
  EXPECT_EQ(cli.Post("/raters/" + rid + "/training-complete", auth, "",
                     "application/json")
                ->status,
            200);
  auto next = cli.Get("/raters/" + rid + "/next-assignment", auth);
  ASSERT_EQ(next->status, 200);
  const json a = json::parse(next->body);
  auto rated = cli.Post("/assignments/" + a["assignment_id"].get<std::string>() +
                            "/rating",
                        auth, Client::Honest(a, 5).dump(), "application/json");
  ASSERT_EQ(rated->status, 200);
  EXPECT_EQ(json::parse(rated->body)["verdict"], "valid");
  EXPECT_EQ(cli.Get("/raters/" + rid + "/next-assignment")->status, 401);
  stop = true;
  server.join();
}

}  // namespace
}  // namespace vidplat
