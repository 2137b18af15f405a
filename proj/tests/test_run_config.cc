// Copyright 2026 The ConVoiFilter Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <fstream>
#include <set>

#include "convoifilter/errors.h"
#include "convoifilter/gradcheck.h"
#include "convoifilter/run_config.h"
#include "doctest.h"
#include "test_util.h"

using namespace cvf;

TEST_CASE("run config round trip and validation") {
  RunConfig c;
  c.seed = 9;
  c.corpus_size = 12;
  c.constraints.min_interferers = 1;
  c.model.mask.hidden = 16;
  c.train.joint = true;
  const RunConfig back = run_config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"train", {{"seed", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"corpus_size", "many"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"constraints", {{"min_interferers", 4}}}}),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::array()), ConfigError);

  const auto dir = testing::temp_dir("runcfg");
  std::ofstream(dir / "bad.json") << "{ \"seed\": ";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), IoError);
}

TEST_CASE("seed streams are distinct") {
  RunConfig c;
  CHECK(c.stream_seed(SeedStream::kTrainCorpus) != c.stream_seed(SeedStream::kEvalCorpus));
  CHECK(c.stream_seed(SeedStream::kModelInit) != c.stream_seed(SeedStream::kTraining));
  RunConfig d = c;
  d.seed = 2;
  CHECK(c.stream_seed(SeedStream::kTraining) != d.stream_seed(SeedStream::kTraining));
}

TEST_CASE("gradient check passes on every suite") {
  const GradcheckReport r = run_gradcheck(5);
  CHECK(r.passed());
  CHECK(r.max_rel_error() < 1e-3);
  std::set<std::string> suites;
  for (const GradcheckEntry& e : r.entries) suites.insert(e.suite);
  CHECK(suites.size() == 3);
}
