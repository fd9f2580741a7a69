#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ecgxai/ecgxai.h"
#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ecgxai_capi_" + name);
  fs::remove_all(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ECGXAI_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.push_back(e.path().filename().string());
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  if (na != nb) return false;
  for (const auto& n : na)
    if (slurp(a / n) != slurp(b / n)) return false;
  return true;
}

}  // namespace

TEST(CApi, ResolveRejectsUnknownKeysAndTypes) {
  char* out = nullptr;
  EXPECT_EQ(ecgxai_resolve_config("synth", R"({"n": 5})", &out), ECGXAI_OK);
  const auto j = Json::parse(out);
  ecgxai_string_free(out);
  EXPECT_EQ(j.begin().key(), "command");
  EXPECT_EQ(j["n"], 5);
  EXPECT_EQ(ecgxai_resolve_config("synth", R"({"bogus": 1})", &out), ECGXAI_INVALID_ARGUMENT);
  EXPECT_NE(std::string(ecgxai_last_error()).find("bogus"), std::string::npos);
  EXPECT_EQ(ecgxai_resolve_config("synth", R"({"n": "five"})", &out), ECGXAI_INVALID_ARGUMENT);
  EXPECT_EQ(ecgxai_resolve_config("synth", R"({"command": "train"})", &out), ECGXAI_INVALID_ARGUMENT);
  EXPECT_EQ(ecgxai_resolve_config("synth", "{not json", &out), ECGXAI_INVALID_ARGUMENT);
  EXPECT_EQ(ecgxai_command_defaults("nope", &out), ECGXAI_INVALID_ARGUMENT);
}

TEST(CApi, DatasetAndModelRoundTrip) {
  ecgxai_dataset* ds = nullptr;
  ASSERT_EQ(ecgxai_dataset_generate(R"({"seed": 3, "classes": ["norm", "mi-like"]})", 4, &ds), ECGXAI_INVALID_ARGUMENT);
  ASSERT_EQ(ecgxai_dataset_generate(R"({"seed": 3})", 4, &ds), ECGXAI_OK);
  EXPECT_EQ(ecgxai_dataset_size(ds), 4u);
  std::size_t len = 0;
  ASSERT_EQ(ecgxai_record_length(ds, 2, &len), ECGXAI_OK);
  EXPECT_EQ(len, 500u);
  std::vector<double> sig(len * 12);
  EXPECT_EQ(ecgxai_record_signal(ds, 2, sig.data(), 10), ECGXAI_INVALID_ARGUMENT);
  ASSERT_EQ(ecgxai_record_signal(ds, 2, sig.data(), sig.size()), ECGXAI_OK);
  EXPECT_EQ(ecgxai_record_length(ds, 9, &len), ECGXAI_INVALID_ARGUMENT);
  ecgxai_dataset_free(ds);

  ecgxai_model* m = nullptr;
  EXPECT_EQ(ecgxai_model_load("/nonexistent/model", &m), ECGXAI_NOT_FOUND);
  const auto data = scratch("data"), model = scratch("model");
  ASSERT_EQ(ecgxai_run("synth", R"({"n": 60, "seed": 1})", data.c_str(), 1), ECGXAI_OK) << ecgxai_last_error();
  const std::string cfg = R"({"dataset": ")" + data.string() + R"(", "epochs": 1})";
  ASSERT_EQ(ecgxai_run("train", cfg.c_str(), model.c_str(), 1), ECGXAI_OK) << ecgxai_last_error();
  ASSERT_EQ(ecgxai_model_load(model.c_str(), &m), ECGXAI_OK);
  EXPECT_EQ(ecgxai_model_outputs(m), 4u);
  std::vector<double> y(4), a(len * 12), b(len * 12);
  ASSERT_EQ(ecgxai_predict(m, sig.data(), len, y.data()), ECGXAI_OK);
  ASSERT_EQ(ecgxai_attribute(m, sig.data(), len, 1, "lrp", nullptr, a.data()), ECGXAI_OK);
  ASSERT_EQ(ecgxai_attribute(m, sig.data(), len, 1, "ig", R"({"ig_steps": 8})", b.data()), ECGXAI_OK);
  EXPECT_EQ(ecgxai_attribute(m, sig.data(), len, 7, "ig", nullptr, b.data()), ECGXAI_INVALID_ARGUMENT);
  EXPECT_EQ(ecgxai_attribute(m, sig.data(), len, 0, "shap", nullptr, b.data()), ECGXAI_INVALID_ARGUMENT);
  EXPECT_EQ(ecgxai_attribute(m, sig.data(), len, 0, "ig", R"({"steps": 8})", b.data()), ECGXAI_INVALID_ARGUMENT);
  ecgxai_model_free(m);
  fs::remove_all(data);
  fs::remove_all(model);
}

TEST(Cli, ExitCodes) {
  const auto out = scratch("cli");
  EXPECT_EQ(cli("synth --n 5 --out " + (out / "ok").string()), 0);
  EXPECT_EQ(cli("synth --heart-rate 90,50 --out " + (out / "bad").string()), 2);
  EXPECT_EQ(cli("synth --no-such-flag 1"), 2);
  EXPECT_EQ(cli("synth --set bogus=1 --out " + (out / "bad2").string()), 2);
  EXPECT_EQ(cli("train --dataset " + (out / "missing").string() + " --out " + (out / "t").string()), 2);
  EXPECT_EQ(cli("report --out " + (out / "r").string()), 2);
  EXPECT_EQ(cli("tcav --dataset " + (out / "ok").string() + " --concepts no-such-concept --out " +
                (out / "t2").string()),
            2);
  fs::remove_all(out);
}

TEST(Cli, SynthIsByteIdenticalAndHonorsClasses) {
  const auto out = scratch("synth");
  ASSERT_EQ(cli("synth --n 30 --seed 7 --out " + (out / "a").string()), 0);
  ASSERT_EQ(cli("synth --n 30 --seed 7 --out " + (out / "b").string()), 0);
  EXPECT_TRUE(same_tree(out / "a", out / "b"));
  ASSERT_EQ(cli("synth --n 20 --classes norm,lvh-like --out " + (out / "c").string()), 0);
  const auto manifest = Json::parse(slurp(out / "c" / "manifest.json"));
  std::size_t seen = 0;
  for (const auto& r : manifest["records"])
    for (const auto& l : r["labels"]) {
      EXPECT_TRUE(l == "norm" || l == "lvh-like") << l;
      ++seen;
    }
  EXPECT_EQ(seen, 20u);
  fs::remove_all(out);
}
