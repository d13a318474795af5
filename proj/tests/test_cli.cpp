#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "uqvol/bvol_io.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(UQVOL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "uqvol_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("cli: synth -> train -> predict -> evaluate -> slices pipeline") {
  const fs::path dir = work_dir();
  write_text(dir / "synth.json",
             R"({"shape":[16,16,16],"bodies":1,"kind":"sphere","noise_sigma":0.3,)"
             R"("blur_sigma":1.0,"seed":7,"count":4})");
  write_text(dir / "train.json",
             R"({"arch":{"mode":"bcnn","base_filter_exponent":1},"epochs":1,)"
             R"("batch_size":2,"learning_rate":0.001,)"
             R"("schedule":{"start_epoch":1,"k0":0.5,"k1":0.5},"seed":11})");

  const std::string d = dir.string();
  CHECK(run("synth --spec " + d + "/synth.json --out " + d + "/data") == 0);
  CHECK(fs::exists(dir / "data/vol_0000.bvol"));
  CHECK(fs::exists(dir / "data/lab_0003.bvol"));

  CHECK(run("train --config " + d + "/train.json --data " + d + "/data --out " + d +
            "/ckpt.bvck") == 0);
  CHECK(fs::exists(dir / "ckpt.bvck"));
  CHECK(fs::exists(dir / "ckpt.bvck.train.csv"));

  CHECK(run("predict --ckpt " + d + "/ckpt.bvck --volume " + d +
            "/data/vol_0000.bvol --mc-samples 8 --step 2 --percentiles 33,67 "
            "--trim 0.1 --seed 5 --chunk-size 16,16,16 --out " +
            d + "/pred") == 0);
  CHECK(fs::exists(dir / "pred/sigmoid.bvol"));
  CHECK(fs::exists(dir / "pred/pred.bvol"));
  CHECK(fs::exists(dir / "pred/unc.bvol"));
  CHECK(fs::exists(dir / "pred/percentile_33.bvol"));
  CHECK(fs::exists(dir / "pred/percentile_67.bvol"));

  CHECK(run("evaluate --pred " + d + "/pred --target " + d +
            "/data/lab_0000.bvol --sample s0 --method bcnn --out " + d +
            "/report.json") == 0);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "report.json.csv"));
  const std::string report = uqvol::read_file((dir / "report.json").string());
  CHECK(report.find("\"accuracy\"") != std::string::npos);

  CHECK(run("slices --volume " + d + "/pred/unc.bvol --axis z --index 8 --out " + d +
            "/unc.pgm") == 0);
  const std::string pgm = uqvol::read_file((dir / "unc.pgm").string());
  CHECK(pgm.rfind("P5\n", 0) == 0);
}

TEST_CASE("cli: evaluate on a self-consistent bundle reports perfect scores") {
  const fs::path dir = work_dir();
  // Build a bundle by hand: pred == target, unc == 0.
  uqvol::LabelVolume lab(8, 8, 8);
  for (uqvol::i64 i = 0; i < lab.size(); ++i)
    lab.data[static_cast<std::size_t>(i)] = (i % 3 == 0) ? 1 : 0;
  fs::create_directories(dir / "pred");
  uqvol::write_bvol(lab, (dir / "pred/pred.bvol").string());
  uqvol::write_bvol(uqvol::Volume(8, 8, 8, 1, 0.0), (dir / "pred/unc.bvol").string());
  uqvol::write_bvol(lab, (dir / "target.bvol").string());

  const std::string d = dir.string();
  CHECK(run("evaluate --pred " + d + "/pred --target " + d + "/target.bvol --out " +
            d + "/report.json") == 0);
  const std::string report = uqvol::read_file((dir / "report.json").string());
  CHECK(report.find("\"accuracy\": 1.0") != std::string::npos);
  CHECK(report.find("\"pavpu3d\": 1.0") != std::string::npos);
}

TEST_CASE("cli: usage errors exit 1, data errors exit 2") {
  const fs::path dir = work_dir();
  CHECK(run("") == 1);                         // missing subcommand
  CHECK(run("predict --bogus-flag x") == 1);   // unknown option
  CHECK(run("synth --spec " + dir.string() + "/missing.json --out " + dir.string() +
            "/data") == 2);                    // unreadable config
  write_text(dir / "bad.json", "{not json");
  CHECK(run("synth --spec " + dir.string() + "/bad.json --out " + dir.string() +
            "/data") == 2);                    // malformed config
}
