// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "ulab/errors.hpp"
#include "ulab/xclients.hpp"

// After Eigen: resolv.h defines a _res macro.
#include <httplib.h>

namespace ulab {
namespace {

using Json = nlohmann::json;
using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

// Stub backend on an ephemeral localhost port; the handler is swapped per test.
class StubServer {
 public:
  StubServer() {
    const auto route = [this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      std::lock_guard<std::mutex> lock(mu_);
      last_body = req.body;
      last_path = req.path;
      last_auth = req.get_header_value("Authorization");
      handler_(req, res);
    };
    server_.Post("/embed", route);
    server_.Post("/nli", route);
    server_.Post("/chat", route);
    server_.Post("/v1/chat", route);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  void on(Handler h) {
    std::lock_guard<std::mutex> lock(mu_);
    handler_ = std::move(h);
    hits = 0;
  }
  BackendConfig config(int retries = 0, const std::string& prefix = "") const {
    BackendConfig c;
    c.url = "http://127.0.0.1:" + std::to_string(port_) + prefix;
    c.timeout = 2;
    c.retries = retries;
    return c;
  }

  std::atomic<int> hits{0};
  std::string last_body, last_path, last_auth;

 private:
  httplib::Server server_;
  std::thread thread_;
  std::mutex mu_;
  Handler handler_ = [](const httplib::Request&, httplib::Response& res) { res.status = 500; };
  int port_ = 0;
};

StubServer& stub() {
  static StubServer s;
  return s;
}

void reply_json(httplib::Response& res, const Json& j) {
  res.set_content(j.dump(), "application/json");
}

TEST(EmbedRemote, SingleVectorIsNormalized) {
  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"vectors", {{3.0, 4.0}}}});
  });
  const std::vector<std::string> texts{"hello"};
  const auto v = embed_remote(stub().config(), texts);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NEAR(v[0][0], 0.6, 1e-15);
  EXPECT_NEAR(v[0][1], 0.8, 1e-15);
  EXPECT_EQ(Json::parse(stub().last_body), Json({{"texts", {"hello"}}}));
}

TEST(EmbedRemote, BatchKeepsInputOrder) {
  stub().on([](const httplib::Request& req, httplib::Response& res) {
    const Json body = Json::parse(req.body);
    Json out = Json::array();
    for (const auto& t : body.at("texts")) {
      out.push_back(Json::array({static_cast<double>(t.get<std::string>().size()), 1.0}));
    }
    reply_json(res, {{"vectors", out}});
  });
  const std::vector<std::string> texts{"a", "bbb", "cc"};
  const auto v = embed_remote(stub().config(), texts);
  ASSERT_EQ(v.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const double len = static_cast<double>(texts[i].size());
    EXPECT_NEAR(v[i][0], len / std::hypot(len, 1.0), 1e-15);
  }
}

TEST(EmbedRemote, MalformedBodiesAreProtocolErrors) {
  const std::vector<std::string> texts{"x", "y"};
  stub().on([](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>oops</html>", "text/html");
  });
  EXPECT_THROW(embed_remote(stub().config(2), texts), ProtocolError);
  EXPECT_EQ(stub().hits, 1);
  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"vectors", {{1.0, 0.0}}}});
  });
  EXPECT_THROW(embed_remote(stub().config(), texts), ProtocolError);
  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"vectors", {{0.0, 0.0}, {1.0, 1.0}}}});
  });
  EXPECT_THROW(embed_remote(stub().config(), texts), ProtocolError);
  EXPECT_THROW(embed_remote(stub().config(), std::span<const std::string>{}), InputError);
}

TEST(RemoteEmbedder, PlugsIntoCosineSimilarity) {
  stub().on([](const httplib::Request& req, httplib::Response& res) {
    const Json body = Json::parse(req.body);
    Json out = Json::array();
    for (const auto& t : body.at("texts")) {
      out.push_back(t.get<std::string>() == "up" ? Json{0.0, 2.0} : Json{-1.0, -1.0});
    }
    reply_json(res, {{"vectors", out}});
  });
  const RemoteEmbedder e(stub().config());
  EXPECT_NEAR(cosine_similarity(e, "up", "up"), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(cosine_similarity(e, "up", "down"), 0.0);
  EXPECT_EQ(e.telemetry().requests, 4);
}

TEST(NliRemote, LabelsAndErrors) {
  stub().on([](const httplib::Request& req, httplib::Response& res) {
    const auto j = Json::parse(req.body);
    reply_json(res, {{"label", j["premise"] == j["hypothesis"] ? "entailment" : "maybe"}});
  });
  EXPECT_EQ(nli_remote(stub().config(), "a b", "a b"), NliLabel::kEntailment);
  EXPECT_EQ(Json::parse(stub().last_body), Json({{"premise", "a b"}, {"hypothesis", "a b"}}));
  EXPECT_THROW(nli_remote(stub().config(), "a", "b"), ProtocolError);
}

TEST(NliRemote, RetriesAfterServiceUnavailable) {
  stub().on([](const httplib::Request&, httplib::Response& res) {
    if (stub().hits == 1) {
      res.status = 503;
      return;
    }
    reply_json(res, {{"label", "contradiction"}});
  });
  Telemetry t;
  EXPECT_EQ(nli_remote(stub().config(1), "p", "h", &t), NliLabel::kContradiction);
  EXPECT_EQ(t.retries, 1);
  EXPECT_EQ(t.requests, 2);
}

TEST(PostJson, RetryPolicy) {
  stub().on([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  Telemetry t;
  EXPECT_THROW(post_json(stub().config(2), "/nli", Json::object(), &t), BackendError);
  EXPECT_EQ(stub().hits, 3);
  EXPECT_EQ(t.retries, 2);

  stub().on([](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  EXPECT_THROW(post_json(stub().config(3), "/nli", Json::object()), BackendError);
  EXPECT_EQ(stub().hits, 1);

  // A 2xx with an unusable body is final.
  stub().on([](const httplib::Request&, httplib::Response& res) {
    res.status = 200;
    res.set_content("{", "application/json");
  });
  EXPECT_THROW(post_json(stub().config(3), "/nli", Json::object()), ProtocolError);
  EXPECT_EQ(stub().hits, 1);
  stub().on([](const httplib::Request&, httplib::Response& res) { reply_json(res, {{"x", 1}}); });
  EXPECT_THROW(nli_remote(stub().config(3), "p", "h"), ProtocolError);
  EXPECT_EQ(stub().hits, 1);
}

TEST(PostJson, TransportFailureAfterRetries) {
  BackendConfig c;
  c.url = "http://127.0.0.1:1";
  c.timeout = 0.5;
  c.retries = 1;
  Telemetry t;
  EXPECT_THROW(post_json(c, "/nli", Json::object(), &t), BackendError);
  EXPECT_EQ(t.requests, 2);
}

TEST(BackendConfig, ValidationAndEnvironmentToken) {
  BackendConfig c;
  EXPECT_THROW(c.validate(), ConfigError);
  c.url = "http://localhost";
  c.timeout = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.timeout = 1;
  c.retries = -1;
  EXPECT_THROW(c.validate(), ConfigError);

  ::setenv("AUTH_TOKEN", "s3cret", 1);
  const BackendConfig env = BackendConfig::with_env_token(stub().config().url, 2, 0);
  ::unsetenv("AUTH_TOKEN");
  EXPECT_EQ(env.auth_token, "s3cret");
  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"label", "neutral"}});
  });
  EXPECT_EQ(nli_remote(env, "p", "h"), NliLabel::kNeutral);
  EXPECT_EQ(stub().last_auth, "Bearer s3cret");
  EXPECT_EQ(nli_remote(stub().config(), "p", "h"), NliLabel::kNeutral);
  EXPECT_EQ(stub().last_auth, "");
}

TEST(BackendConfig, UrlPrefixIsKept) {
  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"text", "NO"}});
  });
  EXPECT_EQ(judge_hallucination(stub().config(0, "/v1"), "q", "r", "g"), Judgment::kNo);
  EXPECT_EQ(stub().last_path, "/v1/chat");
}

TEST(JudgePrompt, MatchesGoldenFile) {
  std::ifstream in(std::string(ULAB_TEST_DATA) + "/judge_prompt_golden.txt", std::ios::binary);
  ASSERT_TRUE(in);
  std::stringstream golden;
  golden << in.rdbuf();
  const std::string q = "Where was Mira Castel born?";
  const std::string r = "Mira Castel was born in Lisbon.";
  const std::string g = "She was born in Oslo.";
  EXPECT_EQ(render_judge_prompt(q, r, g), golden.str());

  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"text", "YES"}});
  });
  EXPECT_EQ(judge_hallucination(stub().config(), q, r, g), Judgment::kYes);
  EXPECT_EQ(Json::parse(stub().last_body).at("prompt").get<std::string>(), golden.str());
}

TEST(JudgePrompt, SlotTextIsNotRescanned) {
  const auto p = render_judge_prompt("{OUTPUT}", "{QUESTION}", "x");
  EXPECT_NE(p.find("Question: {OUTPUT}\n"), std::string::npos);
  EXPECT_NE(p.find("Reference Answer: {QUESTION}\n"), std::string::npos);
  EXPECT_NE(p.find("Generated Answer: x\n"), std::string::npos);
}

TEST(ParseJudgment, FirstStandaloneWordWins) {
  EXPECT_EQ(parse_judgment("YES"), Judgment::kYes);
  EXPECT_EQ(parse_judgment("no."), Judgment::kNo);
  EXPECT_EQ(parse_judgment("Answer: No, then yes"), Judgment::kNo);
  EXPECT_EQ(parse_judgment("Nope. Yes!"), Judgment::kYes);
  EXPECT_EQ(parse_judgment("eyes closed... NO"), Judgment::kNo);
  EXPECT_THROW(parse_judgment("cannot decide"), JudgeParseError);
  EXPECT_THROW(parse_judgment(""), JudgeParseError);
  EXPECT_EQ(to_string(Judgment::kYes), "yes");
}

TEST(JudgeHallucination, NeitherTokenOrEmptyInput) {
  stub().on([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"text", "It depends."}});
  });
  EXPECT_THROW(judge_hallucination(stub().config(), "q", "r", "g"), JudgeParseError);
  EXPECT_THROW(judge_hallucination(stub().config(), "", "r", "g"), InputError);
}

TEST(Clients, SafeForConcurrentUse) {
  stub().on([](const httplib::Request& req, httplib::Response& res) {
    const auto j = Json::parse(req.body);
    reply_json(res, {{"label", j["premise"] == "e" ? "entailment" : "neutral"}});
  });
  const RemoteNli nli(stub().config());
  std::atomic<int> ok{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      for (int i = 0; i < 5; ++i) {
        const bool e = (w + i) % 2 == 0;
        if (nli.classify(e ? "e" : "n", "h") ==
            (e ? NliLabel::kEntailment : NliLabel::kNeutral)) {
          ++ok;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  EXPECT_EQ(ok, 20);
  EXPECT_EQ(nli.telemetry().requests, 20);
}

}  // namespace
}  // namespace ulab
