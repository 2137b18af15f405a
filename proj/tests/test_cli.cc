// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "test_util.h"

namespace fs = std::filesystem;

namespace {

int run_cvf(const std::string& args, const fs::path& log = "/dev/null") {
  const std::string cmd = std::string(CVF_BINARY) + " " + args + " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("mix is reproducible and recipes re-realize bitwise") {
  const fs::path dir = cvf::testing::temp_dir("cli_mix");
  REQUIRE(run_cvf("mix --synthetic --seed 7 --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cvf("mix --synthetic --seed 7 --out " + (dir / "b").string()) == 0);
  CHECK(lines(dir / "a" / "manifest.jsonl").size() == 100);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
    ++files;
  }
  CHECK(files == 100 * 3 + 3);

  REQUIRE(run_cvf("mix --seed 7 --recipes " + (dir / "a" / "recipes.jsonl").string() + " --out " +
              (dir / "c").string()) == 0);
  for (const auto& name : {"ex00000_noisy.wav", "ex00042_clean.wav", "ex00099_reference.wav"})
    CHECK(slurp(dir / "a" / name) == slurp(dir / "c" / name));

  REQUIRE(run_cvf("mix --synthetic --seed 8 --n 5 --out " + (dir / "d").string()) == 0);
  CHECK(lines(dir / "d" / "manifest.jsonl").size() == 5);
  CHECK(slurp(dir / "d" / "ex00000_noisy.wav") != slurp(dir / "a" / "ex00000_noisy.wav"));
}

TEST_CASE("eval scores each item and clamps perfect estimates") {
  const fs::path dir = cvf::testing::temp_dir("cli_eval");
  REQUIRE(run_cvf("mix --synthetic --seed 3 --n 4 --out " + dir.string()) == 0);
  std::ofstream m(dir / "self.jsonl");
  for (const std::string& l : lines(dir / "manifest.jsonl")) {
    auto j = nlohmann::json::parse(l);
    j["noisy"] = j["clean"];
    m << j.dump() << '\n';
  }
  m.close();
  REQUIRE(run_cvf("eval --unprocessed --manifest " + (dir / "self.jsonl").string() + " --out " +
              (dir / "self_report.jsonl").string()) == 0);
  const auto report = lines(dir / "self_report.jsonl");
  REQUIRE(report.size() == 5);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(nlohmann::json::parse(report[i])["si_snr_db"].get<double>() == doctest::Approx(60.0));
  const auto agg = nlohmann::json::parse(report[4]);
  CHECK(agg["aggregate"] == true);
  CHECK(agg["count"] == 4);

  REQUIRE(run_cvf("eval --unprocessed --manifest " + (dir / "manifest.jsonl").string(),
              dir / "stdout.jsonl") == 0);
  CHECK(lines(dir / "stdout.jsonl").size() == 5);
}

TEST_CASE("enhance with the oracle mask improves the mixture") {
  const fs::path dir = cvf::testing::temp_dir("cli_enh");
  REQUIRE(run_cvf("mix --synthetic --seed 5 --n 1 --out " + dir.string()) == 0);
  const std::string noisy = (dir / "ex00000_noisy.wav").string();
  const std::string clean = (dir / "ex00000_clean.wav").string();
  REQUIRE(run_cvf("enhance --noisy " + noisy + " --oracle " + clean + " --clean " + clean +
                  " --out " + (dir / "out.wav").string() + " --spectrogram " +
                  (dir / "out.png").string(),
              dir / "enh.txt") == 0);
  CHECK(fs::file_size(dir / "out.wav") == fs::file_size(noisy));
  CHECK(fs::file_size(dir / "out.png") > 0);
  const std::string text = slurp(dir / "enh.txt");
  CHECK(text.find("input si_snr_db=") != std::string::npos);
  CHECK(text.find("output si_snr_db=") != std::string::npos);
}

TEST_CASE("gradcheck and exit codes") {
  CHECK(run_cvf("gradcheck --seed 3") == 0);
  CHECK(run_cvf("gradcheck --seed 3 --tol 0") == 3);
  CHECK(run_cvf("") == 1);
  CHECK(run_cvf("frobnicate") == 1);
  CHECK(run_cvf("mix --synthetic") == 1);
  CHECK(run_cvf("eval --unprocessed --manifest /nonexistent/manifest.jsonl") == 2);
  CHECK(run_cvf("enhance --noisy /nonexistent.wav --out /tmp/x.wav --oracle /nonexistent.wav") == 2);
  const fs::path dir = cvf::testing::temp_dir("cli_cfg");
  std::ofstream(dir / "bad.json") << R"({"seed": 1, "bogus": true})";
  CHECK(run_cvf("mix --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string()) == 1);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run_cvf("mix --config " + (dir / "broken.json").string() + " --out " + (dir / "o").string()) == 1);
}
