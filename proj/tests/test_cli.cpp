#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "support.hpp"

namespace {

using test_support::TempDir;
namespace fs = std::filesystem;

struct Outcome {
  int status = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tempofuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.status = tempofuse::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

bool one_error_line(const Outcome& o, const std::string& code) {
  return count_lines(o.err) == 1 && o.err.rfind("error[" + code + "]: ", 0) == 0;
}

struct EnvGuard {
  explicit EnvGuard(const std::string& value) { setenv("TEMPOFUSE_CACHE", value.c_str(), 1); }
  ~EnvGuard() { unsetenv("TEMPOFUSE_CACHE"); }
};

// two well separated tempo classes, short songs, full-clip features
struct Fixture {
  TempDir dir;
  fs::path data = dir / "data";
  fs::path cache = dir / "cache";

  Fixture() {
    nlohmann::json spec = {
        {"songs_per_class", 10},
        {"duration_s", 12.0},
        {"seed", 3},
        {"classes",
         {{{"name", "bpm120"}, {"bpm", 120.0}, {"timbre", "click"}, {"jitter", 0.05}},
          {{"name", "bpm170"}, {"bpm", 170.0}, {"timbre", "click"}, {"jitter", 0.05}}}}};
    write(dir / "spec.json", spec.dump());
    const auto r = run_cli({"synth", "--out", data.string(), "--spec", (dir / "spec.json").string()});
    REQUIRE(r.status == 0);
  }
};

}  // namespace

TEST_CASE("help lists the defaults") {
  const auto root = run_cli({"--help"});
  CHECK(root.status == 0);
  CHECK(root.out.find("200-frame") != std::string::npos);
  for (const auto& sub : {"synth", "extract", "tempo", "train", "eval", "predict", "gradcheck"}) {
    CHECK(root.out.find(sub) != std::string::npos);
  }

  const auto extract = run_cli({"extract", "--help"});
  CHECK(extract.status == 0);
  for (const auto& v : {"2048", "512", "128", "15:45"}) {
    CAPTURE(v);
    CHECK(extract.out.find(v) != std::string::npos);
  }

  const auto train = run_cli({"train", "--help"});
  CHECK(train.status == 0);
  for (const auto& v : {"256", "200", "0.005", "2048", "512", "128", "late"}) {
    CAPTURE(v);
    CHECK(train.out.find(v) != std::string::npos);
  }
}

TEST_CASE("errors are one line with a nonzero status") {
  auto r = run_cli({"nonsense"});
  CHECK(r.status == 2);
  CHECK(one_error_line(r, "usage"));

  r = run_cli({"train", "-m", "x", "-o", "y", "--mode", "mel_fused"});
  CHECK(r.status == 2);
  CHECK(one_error_line(r, "usage"));

  r = run_cli({"train", "-m", "x", "-o", "y", "--mode", "mel_only", "--tempo-channels", "8"});
  CHECK(r.status == 2);
  CHECK(one_error_line(r, "invalid_argument"));
  CHECK(r.err.find("--tempo-channels") != std::string::npos);

  r = run_cli({"train", "-m", "x", "-o", "y", "--mode", "ftg_only", "--blocks", "2"});
  CHECK(r.status == 2);
  CHECK(one_error_line(r, "invalid_argument"));

  TempDir dir;
  r = run_cli({"predict", "-c", (dir / "missing.tfck").string(), (dir / "missing.wav").string()});
  CHECK(r.status == 3);
  CHECK(one_error_line(r, "io"));

  write(dir / "bad.tfck", "not a checkpoint");
  r = run_cli({"predict", "-c", (dir / "bad.tfck").string(), (dir / "missing.wav").string()});
  CHECK(r.status != 0);
  CHECK(count_lines(r.err) == 1);
}

TEST_CASE("extract is idempotent and honours the cache precedence") {
  Fixture fx;
  auto first = run_cli({"extract", "-m", fx.data.string(), "--cache", fx.cache.string(),
                        "--segment", "full"});
  REQUIRE(first.status == 0);
  CHECK(first.out.find("extracted 20, skipped 0") != std::string::npos);

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(fx.cache)) {
    if (e.path().extension() == ".tfr") files.push_back(e.path());
  }
  REQUIRE(files.size() == 20);
  const auto before = slurp(files.front());
  const auto stamp = fs::last_write_time(files.front());

  auto second = run_cli({"extract", "-m", fx.data.string(), "--cache", fx.cache.string(),
                         "--segment", "full"});
  REQUIRE(second.status == 0);
  CHECK(second.out.find("extracted 0, skipped 20") != std::string::npos);
  CHECK(slurp(files.front()) == before);
  CHECK(fs::last_write_time(files.front()) == stamp);

  // other settings go to a separate directory
  auto other = run_cli({"extract", "-m", fx.data.string(), "--cache", fx.cache.string(),
                        "--segment", "0:10"});
  REQUIRE(other.status == 0);
  CHECK(other.out.find("extracted 20") != std::string::npos);

  const auto env_root = fx.dir / "env-cache";
  EnvGuard env(env_root.string());
  auto from_env = run_cli({"extract", "-m", fx.data.string(), "--segment", "full"});
  REQUIRE(from_env.status == 0);
  CHECK(fs::exists(env_root));
  CHECK(from_env.out.find(env_root.string()) != std::string::npos);

  // the flag beats the environment
  auto flag = run_cli({"extract", "-m", fx.data.string(), "--cache", fx.cache.string(),
                       "--segment", "full"});
  REQUIRE(flag.status == 0);
  CHECK(flag.out.find("extracted 0, skipped 20") != std::string::npos);
}

TEST_CASE("train, eval and predict end to end") {
  Fixture fx;
  const auto out = fx.dir / "run";
  write(fx.dir / "config.toml",
        "[train]\n"
        "epochs = 40\n"
        "lr = 0.01\n"
        "segment = \"full\"\n"
        "tempo-channels = 8\n"
        "embed-channels = 8\n"
        "hidden = 16\n"
        "batch-size = 8\n"
        "patience = 0\n");
  auto tr = run_cli({"--config", (fx.dir / "config.toml").string(), "train", "-m",
                     fx.data.string(), "-o", out.string(), "--cache", fx.cache.string(),
                     "--mode", "ftg_only", "--epochs", "6", "--seed", "1"});
  INFO(tr.err);
  REQUIRE(tr.status == 0);

  // flag over config over default
  const auto cfg = nlohmann::json::parse(slurp(out / "train_config.json"));
  CHECK(cfg.at("lr").get<double>() == 0.01);
  CHECK(cfg.at("epochs").get<int>() == 6);
  CHECK(cfg.at("batch_size").get<int>() == 8);
  CHECK(count_lines(slurp(out / "epochs.csv")) == 1 + 6);
  CHECK(fs::exists(out / "model.tfck"));
  CHECK(fs::exists(out / "split.csv"));

  auto ev = run_cli({"eval", "-c", (out / "model.tfck").string(), "-m", fx.data.string(),
                     "--split", (out / "split.csv").string(), "-o", (fx.dir / "report").string(),
                     "--cache", fx.cache.string()});
  INFO(ev.err);
  REQUIRE(ev.status == 0);
  CHECK(ev.out.find("partition test: 2 songs") != std::string::npos);
  CHECK(fs::exists(fx.dir / "report" / "predictions.csv"));

  // a split without test songs
  std::string only_train = "song_id,partition\n";
  for (const auto& e : fs::recursive_directory_iterator(fx.data)) {
    if (e.path().extension() == ".wav") only_train += e.path().stem().string() + ",train\n";
  }
  write(fx.dir / "train_only.csv", only_train);
  auto empty = run_cli({"eval", "-c", (out / "model.tfck").string(), "-m", fx.data.string(),
                        "--split", (fx.dir / "train_only.csv").string(), "-o",
                        (fx.dir / "report2").string(), "--cache", fx.cache.string()});
  CHECK(empty.status == 7);
  CHECK(one_error_line(empty, "empty_input"));
  CHECK(empty.err.find("empty split") != std::string::npos);

  // a fresh 120 BPM recording
  const auto clip = test_support::click_track(120.0, 12.0, 22050, 0.13);
  std::vector<std::int16_t> pcm;
  for (float s : clip.samples) pcm.push_back(static_cast<std::int16_t>(s * 30000.0f));
  test_support::write_pcm16(fx.dir / "probe.wav", 22050, 1, pcm);
  auto pr = run_cli({"predict", "-c", (out / "model.tfck").string(),
                     (fx.dir / "probe.wav").string()});
  INFO(pr.err);
  REQUIRE(pr.status == 0);
  const auto j = nlohmann::json::parse(pr.out);
  CHECK(j.at("class") == "bpm120");
  CHECK(j.at("chunks").get<int>() >= 1);
  double total = 0;
  for (const auto& [k, v] : j.at("scores").items()) total += v.get<double>();
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}
