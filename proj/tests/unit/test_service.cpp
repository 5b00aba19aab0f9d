#include "streetlatent/service.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <future>
#include <thread>

#include "test_util.hpp"

using namespace streetlatent;

namespace {

ConditionedSet planted_set() {
  const auto truth = make_ground_truth(101, 16);
  std::vector<SemanticBoundary> bs;
  for (auto d : {Dimension::income, Dimension::education, Dimension::health}) {
    SemanticBoundary b;
    b.dimension = d;
    b.normal = truth.weight(d);
    bs.push_back(b);
  }
  return orthogonalize_set(bs);
}

// Serves one state on an ephemeral localhost port for the fixture's lifetime.
class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    state_ = std::make_shared<const ServiceState>(make_service_state(planted_set(), 16, "test-version"));
    install_routes(server_, state_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }

  std::shared_ptr<const ServiceState> state_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_F(ServiceTest, SynthesizeMatchesCliGenerate) {
  testutil::TempDir dir("service_cli");
  const auto out = dir.path() / "seed42.png";
  const std::string cmd = std::string(STREETLATENT_CLI) + " generate --seed 42 --image " + out.string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  auto res = client().Get("/api/synthesize?seed=42");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->get_header_value("X-Artifact-Version"), "test-version");
  EXPECT_EQ(res->body, io::read_text(out));
}

TEST_F(ServiceTest, EditsMoveOnlyTheirOwnDecisionValue) {
  auto res = client().Get("/api/synthesize?seed=7&psi=0.7&alpha_income=1.5&alpha_health=-2");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const auto image = png::to_raster(png::decode(std::vector<std::uint8_t>(res->body.begin(), res->body.end())));
  const auto z = base_latent(7, 0.7, 16);
  const auto edited = condition(z, {{Dimension::income, 1.5}, {Dimension::health, -2.0}}, state_->normals);
  EXPECT_EQ(image, png::to_raster(png::to_gray(generate(edited))));
  EXPECT_EQ(res->get_header_value("X-Applied-Alphas"), "income=1.5,education=0,health=-2");
}

TEST_F(ServiceTest, AlphasAreClampedAndReported) {
  auto res = client().Get("/api/synthesize?seed=3&alpha_education=9.5&alpha_income=-4");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("X-Applied-Alphas"), "income=-3,education=3,health=0");
  auto clamped = client().Get("/api/synthesize?seed=3&alpha_education=3&alpha_income=-3");
  EXPECT_EQ(res->body, clamped->body);
}

TEST_F(ServiceTest, BadQueriesAreRejected) {
  for (const char* q : {"/api/synthesize?seed=abc", "/api/synthesize?seed=-1", "/api/synthesize?psi=1.5",
                        "/api/synthesize?alpha_income=x", "/api/describe?psi=nan"}) {
    auto res = client().Get(q);
    ASSERT_TRUE(res) << q;
    EXPECT_EQ(res->status, 400) << q;
    EXPECT_TRUE(io::json::parse(res->body).contains("error")) << q;
  }
}

TEST_F(ServiceTest, BoundariesDescribeAndHealth) {
  auto b = client().Get("/api/boundaries");
  ASSERT_TRUE(b);
  const auto j = io::json::parse(b->body);
  EXPECT_EQ(j.at("version"), "test-version");
  EXPECT_EQ(j.at("boundaries").size(), 3u);
  EXPECT_EQ(j.at("orthogonality_residuals").size(), 3u);
  for (const auto& r : j.at("orthogonality_residuals")) EXPECT_LE(std::abs(r.at("dot").get<double>()), 1e-8);
  EXPECT_EQ(conditioned_set_from_json(j).boundaries[2].normal, state_->normals.boundaries[2].normal);

  auto d = client().Get("/api/describe?seed=11");
  ASSERT_TRUE(d);
  const auto dj = io::json::parse(d->body);
  EXPECT_EQ(io::latent_from_json(dj.at("latent")), base_latent(11, kDefaultPsi, 16));
  EXPECT_EQ(dj.at("params").size(), kSceneParamCount);
  EXPECT_DOUBLE_EQ(dj.at("params").at("facade_tone").get<double>(), decode_params(base_latent(11, 0.5, 16)).facade_tone);

  auto h = client().Get("/api/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(io::json::parse(h->body).at("status"), "ok");
  EXPECT_EQ(client().Get("/api/nothing")->status, 404);
}

TEST_F(ServiceTest, ConcurrentIdenticalRequestsAgree) {
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 8; ++i)
    futures.push_back(std::async(std::launch::async, [this] {
      auto res = client().Get("/api/synthesize?seed=99&alpha_health=2.25&alpha_education=-1");
      return res && res->status == 200 ? res->body : std::string();
    }));
  const auto first = futures[0].get();
  ASSERT_FALSE(first.empty());
  for (std::size_t i = 1; i < futures.size(); ++i) EXPECT_EQ(futures[i].get(), first);
}

TEST(ServiceState, LoadsArtifactsAndChecksGenerator) {
  testutil::TempDir dir("service_state");
  EXPECT_THROW(load_service_state(dir.path()), IoError);
  io::write_json(generator_path(dir.path()), generator_constants(16));
  io::write_json(conditioned_path(dir.path()), to_json(planted_set()));
  const auto s = load_service_state(dir.path());
  EXPECT_EQ(s.version.size(), 16u);
  EXPECT_EQ(s.version, load_service_state(dir.path()).version);

  auto g = generator_constants(16);
  g["matrix_sha256"] = "0000";
  io::write_json(generator_path(dir.path()), g);
  EXPECT_THROW(load_service_state(dir.path()), IoError);
}

TEST(ServiceState, RejectsNonOrthogonalNormals) {
  auto set = planted_set();
  set.boundaries[1].normal = set.boundaries[0].normal;
  EXPECT_THROW(make_service_state(set, 16, "v"), InvalidArgument);
  EXPECT_THROW(make_service_state(ConditionedSet{}, 16, "v"), InvalidArgument);
}

TEST(ServiceHelpers, ParseBindAndRequest) {
  EXPECT_EQ(parse_bind("0.0.0.0:9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_EQ(parse_bind("8081"), (std::pair<std::string, int>{"127.0.0.1", 8081}));
  EXPECT_THROW(parse_bind("host:http"), InvalidArgument);
  EXPECT_THROW(parse_bind("host:70000"), InvalidArgument);
  EXPECT_THROW(parse_bind(":80"), InvalidArgument);

  httplib::Params p{{"seed", "5"}, {"psi", "0.25"}, {"alpha_health", "-7"}, {"other", "x"}};
  const auto r = parse_request(p);
  EXPECT_EQ(r.seed, 5u);
  EXPECT_EQ(r.psi, 0.25);
  EXPECT_EQ(r.alphas.at(Dimension::health), -3.0);
  EXPECT_EQ(r.alphas.at(Dimension::income), 0.0);
  EXPECT_EQ(format_alphas(r.alphas), "income=0,education=0,health=-3");
}
