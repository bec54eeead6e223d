#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("sorbfit_cli_" + std::to_string(::getpid()));

int run(const std::string& args) {
  const std::string cmd = std::string("cd \"") + kRoot.string() + "\" && \"" + SORBFIT_CLI_PATH + "\" " + args +
                          " > last.log 2> last.err";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

struct Workdir {
  Workdir() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write(kRoot / "spec.json", R"({"n_samples": [6, 6, 6], "temperatures": [298.15, 323.15], "seed": 5})");
    write(kRoot / "sched.json", R"({"epochs": [3, 3, 2], "patience": 5})");
  }
  ~Workdir() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_CASE("cli workflow from synthetic data to metrics") {
  Workdir w;
  REQUIRE(run("synth --spec spec.json --out data") == 0);
  REQUIRE(run("ingest --isotherms data/isotherms.csv --properties data/properties.csv --out clean") == 0);
  REQUIRE(run("fit --in clean --forms Langmuir,Sips --boot 5 --cv 3 --out fits/fits.json") == 0);
  CHECK(fs::exists(kRoot / "fits" / "fits.config.json"));
  const auto fits = json::parse(slurp(kRoot / "fits" / "fits.json"));
  CHECK(fits.at("samples").size() == 36);
  REQUIRE(run("thermo --fits fits/fits.json --out thermo") == 0);
  const auto th = json::parse(slurp(kRoot / "thermo" / "thermo.json"));
  CHECK(th.at("samples").at(0).at("vant_hoff").contains("Langmuir"));

  REQUIRE(run("featurize --in clean --select 20 --out feat") == 0);
  CHECK(fs::exists(kRoot / "feat" / "features_train.csv"));
  REQUIRE(run("train --features feat --schedule sched.json --out model") == 0);
  REQUIRE(run("predict --ensemble model/manifest.json --in feat/isotherms.csv --out preds.csv") == 0);
  const auto preds = slurp(kRoot / "preds.csv");
  CHECK(preds.rfind("sample_key,lithology,pressure_bar,temperature_K,mean,sigma_cal,lo,hi\n", 0) == 0);
  REQUIRE(run("evaluate --preds preds.csv --truth feat/isotherms.csv --out metrics.json") == 0);
  const auto m = json::parse(slurp(kRoot / "metrics.json"));
  CHECK(m.at("matched_rows").get<std::size_t>() == m.at("n").get<std::size_t>());
  CHECK(m.at("physics").contains("monotonicity_score"));
}

TEST_CASE("cli outputs are deterministic and carry no timestamps") {
  Workdir w;
  REQUIRE(run("synth --spec spec.json --out a") == 0);
  REQUIRE(run("synth --spec spec.json --out b") == 0);
  for (const char* f : {"isotherms.csv", "properties.csv", "truth.json", "config.json"})
    CHECK(slurp(kRoot / "a" / f) == slurp(kRoot / "b" / f));
  const auto cfg = json::parse(slurp(kRoot / "a" / "config.json"));
  CHECK(cfg.at("command") == "synth");
  CHECK(cfg.at("config").at("spec").at("seed") == 5);
  CHECK_FALSE(cfg.dump().find("time") != std::string::npos);

  REQUIRE(run("synth --spec spec.json --seed 9 --out c") == 0);
  CHECK(json::parse(slurp(kRoot / "c" / "config.json")).at("config").at("spec").at("seed") == 9);
  CHECK(slurp(kRoot / "a" / "isotherms.csv") != slurp(kRoot / "c" / "isotherms.csv"));
}

TEST_CASE("cli exit codes") {
  Workdir w;
  CHECK(run("--version") == 0);
  CHECK(run("synth --out x --no-such-flag") == 1);
  CHECK(run("") == 1);
  CHECK(run("fit --in missing_dir --out f.json") == 2);
  const auto err = json::parse(slurp(kRoot / "last.err"));
  CHECK(err.at("exit_code") == 2);
  write(kRoot / "bad.json", R"({"n_samples": [6, 6, 6], "colour": "red"})");
  CHECK(run("synth --spec bad.json --out y") == 1);
  write(kRoot / "broken.json", "{not json");
  CHECK(run("synth --spec broken.json --out y") == 1);
  CHECK(run("train --features nowhere --physics maybe --out m") == 1);
}
