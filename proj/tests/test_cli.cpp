#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include "panodepth/image_io.hpp"
#include "panodepth/renderer.hpp"

namespace fs = std::filesystem;
using namespace panodepth;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(PANODEPTH_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

}  // namespace

TEST_CASE("synth writes 4 records per scene, reproducibly, for any worker count") {
  TempDir tmp("panodepth_cli_synth");
  const auto a = run("synth --scenes 2 --width 128 --out " + (tmp / "a") + " --seed 1");
  REQUIRE(a.code == 0);
  CHECK(contains(a.out, "seed=1"));
  CHECK(read_manifest(tmp / "a/manifest.csv").records.size() == 8);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "a")) files += e.path().filename() != "manifest.csv";
  CHECK(files == 24);
  REQUIRE(run("synth --scenes 2 --width 128 --out " + (tmp / "b") + " --seed 1 --jobs 3").code == 0);
  for (const auto& e : fs::directory_iterator(tmp.path / "a")) {
    CHECK(read_file(e.path().string()) == read_file((tmp.path / "b" / e.path().filename()).string()));
  }
}

TEST_CASE("synth rejects widths that are not divisible by 4") {
  TempDir tmp("panodepth_cli_width");
  const auto r = run("synth --scenes 1 --width 130 --out " + (tmp / "x"));
  CHECK(r.code == 2);
  CHECK(contains(r.out, "divisible by 4"));
}

TEST_CASE("synth renders a scene file") {
  TempDir tmp("panodepth_cli_scene");
  write_file(tmp / "cube.scene", "camera 0 0 0\nroom -2 -2 -2 2 2 2 albedo 0.5 0.5 0.5\n");
  REQUIRE(run("synth --scene-file " + (tmp / "cube.scene") + " --width 32 --out " + (tmp / "d")).code == 0);
  const auto m = read_manifest(tmp / "d/manifest.csv");
  REQUIRE(m.records.size() == 4);
  CHECK(m.records[0].scene_id == "cube");
  CHECK(run("synth --scene-file " + (tmp / "missing.scene") + " --width 32 --out " + (tmp / "e")).code == 3);
  write_file(tmp / "bad.scene", "camera 0 0 0\nwall 1\n");
  CHECK(run("synth --scene-file " + (tmp / "bad.scene") + " --width 32 --out " + (tmp / "f")).code == 2);
}

TEST_CASE("gradcheck subcommand") {
  const auto ok = run("gradcheck --arch rectnet --width 2 --dims 8x16");
  CHECK(ok.code == 0);
  CHECK(contains(ok.out, "max relative error"));
  CHECK(run("gradcheck --arch uresnet --width 2 --dims 8x16").code == 2);
  CHECK(run("gradcheck --arch uresnet --width 2 --dims 32x64 --max-per-tensor 3").code == 0);
  CHECK(run("gradcheck --dims 8by16").code == 2);
}

TEST_CASE("train, predict, eval and info work together") {
  TempDir tmp("panodepth_cli_flow");
  REQUIRE(run("synth --scenes 1 --width 32 --out " + (tmp / "d") + " --seed 2").code == 0);
  const std::string manifest = tmp / "d/manifest.csv";
  const auto tr = run("train --manifest " + manifest + " --width 2 --iterations 3 --batch 2 --out " + (tmp / "m.ckpt") +
                      " --log " + (tmp / "log.csv") + " --seed 5");
  REQUIRE(tr.code == 0);
  CHECK(contains(tr.out, "iterations=3"));
  const auto log = read_file(tmp / "log.csv");
  CHECK(log.rfind("step,loss,depth_term,smooth_term,seconds\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);

  REQUIRE(run("train --manifest " + manifest + " --width 2 --iterations 3 --batch 2 --out " + (tmp / "m2.ckpt") +
              " --seed 5").code == 0);
  CHECK(read_file(tmp / "m.ckpt") == read_file(tmp / "m2.ckpt"));

  const auto records = read_manifest(manifest).records;
  const std::string color = tmp / ("d/" + records[0].color);
  REQUIRE(run("predict --ckpt " + (tmp / "m.ckpt") + " --in " + color + " --out " + (tmp / "p.pfm")).code == 0);
  CHECK(read_file(tmp / "p.pfm").rfind("Pf\n32 16\n-1.0\n", 0) == 0);

  const auto ev = run("eval --pred " + (tmp / "p.pfm") + " --gt " + (tmp / ("d/" + records[0].depth)) + " --mask " +
                      (tmp / ("d/" + records[0].mask)));
  CHECK(ev.code == 0);
  CHECK(contains(ev.out, "aggregate,"));

  const auto ev2 = run("eval --ckpt " + (tmp / "m.ckpt") + " --manifest " + manifest + " --csv " + (tmp / "m.csv") +
                       " --jobs 2");
  CHECK(ev2.code == 0);
  CHECK(read_file(tmp / "m.csv").rfind("sample,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,valid_px,", 0) == 0);

  const auto info = run("info --manifest " + manifest);
  CHECK(info.code == 0);
  CHECK(contains(info.out, "records 4"));
  CHECK(contains(info.out, "dims 32x16"));
  const auto ck = run("info --ckpt " + (tmp / "m.ckpt"));
  CHECK(contains(ck.out, "architecture rectnet"));
  CHECK(contains(ck.out, "step 3"));

  write_file(manifest, read_file(manifest) + "gone.ppm,gone.pfm,gone.pgm,gone,0\n");
  CHECK(run("eval --ckpt " + (tmp / "m.ckpt") + " --manifest " + manifest).code == 3);
  CHECK(run("predict --ckpt " + (tmp / "missing.ckpt") + " --in " + color + " --out " + (tmp / "q.pfm")).code == 3);
}

TEST_CASE("config files supply flags and conflicts are errors") {
  TempDir tmp("panodepth_cli_config");
  write_file(tmp / "synth.cfg", "# dataset\nscenes 1\nwidth 32\n");
  const auto r = run("--config " + (tmp / "synth.cfg") + " synth --out " + (tmp / "d"));
  CHECK(r.code == 0);
  CHECK(contains(r.out, "width=32"));
  CHECK(read_manifest(tmp / "d/manifest.csv").records.size() == 4);
  CHECK(run("--config " + (tmp / "synth.cfg") + " synth --width 64 --out " + (tmp / "e")).code == 2);
  write_file(tmp / "broken.cfg", "scenes\n");
  CHECK(run("--config " + (tmp / "broken.cfg") + " synth --out " + (tmp / "f")).code == 2);
  CHECK(run("--config " + (tmp / "nothing.cfg") + " synth --out " + (tmp / "f")).code == 3);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("synth --scenes 1").code == 2);
}

TEST_CASE("convert splits a panorama into faces and merges it back") {
  TempDir tmp("panodepth_cli_convert");
  DepthMap flat(64, 32, 1, 3.5f);
  save_depth(tmp / "pano.pfm", flat);
  REQUIRE(run("convert --in " + (tmp / "pano.pfm") + " --out " + (tmp / "faces") + " --face-size 16").code == 0);
  CHECK(load_depth(tmp / "faces/pz.pfm").width() == 16);
  REQUIRE(run("convert --faces " + (tmp / "faces") + " --out " + (tmp / "back.pfm") + " --width 64").code == 0);
  CHECK(load_depth(tmp / "back.pfm") == flat);
  CHECK(run("convert --in " + (tmp / "pano.png") + " --out " + (tmp / "x")).code == 2);
}
