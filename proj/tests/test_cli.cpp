#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"
#include "jcdp/container.hpp"

namespace fs = std::filesystem;
using jcdp::test::scratch_dir;
using json = nlohmann::json;

namespace {

std::string cli() {
  const char* p = std::getenv("JCDP_CLI");
  REQUIRE_MESSAGE(p != nullptr, "JCDP_CLI must point at the built binary");
  return p;
}

struct CmdResult {
  int rc = -1;
  std::string out;
};

CmdResult run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = ::pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// Tiny-scale flag block shared by the pipeline-driving cases.
const std::string kTinyData = " --classes 4 --size 16 --train 48 --test 24";
const std::string kTinyDdpm = " --T 25 --width 8 --depth 1 --temb 8 --steps 40 --batch 8";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen, forge, purify, validate round out a provenance chain") {
    const fs::path dir = scratch_dir("cli-chain");
    const std::string clean = (dir / "clean").string();
    const std::string ue = (dir / "ue").string();

    auto r = run("gen-toy-data --out " + clean + " --seed 5" + kTinyData);
    CHECK(r.rc == 0);
    CHECK(r.out.find("toy-f0-k4-s16-n48+24-seed5") != std::string::npos);

    r = run("forge-ue --in " + clean + " --out " + ue +
            " --kind random_class_patch --eps 0.06 --seed 9");
    CHECK(r.rc == 0);
    CHECK(r.out.find("violations=0") != std::string::npos);

    // The chain walk resolves the recorded source path and re-validates it.
    r = run("validate " + ue);
    CHECK(r.rc == 0);
    CHECK(r.out.find("toy-f0-k4-s16-n48+24-seed5+random_class_patch") != std::string::npos);

    const json manifest = json::parse(slurp(dir / "ue" / "manifest.json"));
    const json& last = manifest.at("provenance").back();
    CHECK(last.at("kind") == "forge-ue");
    CHECK(last.at("clean_ref") == "toy-f0-k4-s16-n48+24-seed5");
    CHECK(last.at("budget").at("norm") == "l_inf");
  }

  TEST_CASE("purify with zero guidance matches --unconditional byte for byte") {
    const fs::path dir = scratch_dir("cli-uncond");
    const std::string clean = (dir / "clean").string();
    const std::string ddpm = (dir / "ddpm").string();
    const std::string ext = (dir / "ext").string();

    REQUIRE(run("gen-toy-data --out " + clean + " --seed 5" + kTinyData).rc == 0);
    REQUIRE(run("train-ddpm --data " + clean + " --out " + ddpm + kTinyDdpm + " --seed 3").rc ==
            0);
    REQUIRE(run("train-extractor --data " + clean + " --out " + ext + " --steps 30 --seed 4")
                .rc == 0);

    const std::string guided = (dir / "p0").string();
    const std::string plain = (dir / "pu").string();
    REQUIRE(run("purify --in " + clean + " --ddpm " + ddpm + " --extractor " + ext + " --out " +
                guided + " --seed 6 --N 2 --lambda1 0 --lambda2 0")
                .rc == 0);
    REQUIRE(run("purify --in " + clean + " --ddpm " + ddpm + " --out " + plain +
                " --seed 6 --N 2 --unconditional")
                .rc == 0);
    CHECK(jcdp::file_hash(dir / "p0" / "train_images.jt") ==
          jcdp::file_hash(dir / "pu" / "train_images.jt"));

    // Guidance without an extractor has no interpretation.
    const auto r = run("purify --in " + clean + " --ddpm " + ddpm + " --out " +
                       (dir / "px").string() + " --seed 6");
    CHECK(r.rc == 3);
    CHECK(r.out.find("--extractor") != std::string::npos);
  }

  TEST_CASE("failure kinds map to distinct exit codes") {
    const fs::path dir = scratch_dir("cli-codes");
    const std::string clean = (dir / "clean").string();
    REQUIRE(run("gen-toy-data --out " + clean + " --seed 5" + kTinyData).rc == 0);

    auto r = run("gen-toy-data --out " + (dir / "x").string() + " --seed 1 --bogus");
    CHECK(r.rc == 2);
    CHECK(r.out.find("error[usage]") != std::string::npos);

    r = run("gen-toy-data --out " + (dir / "x2").string());
    CHECK(r.rc == 2);  // --seed is mandatory

    r = run("evaluate --model " + (dir / "nope").string() + " --data " + clean);
    CHECK(r.rc == 4);
    CHECK(r.out.find("error[missing]") != std::string::npos);

    r = run("forge-ue --in " + clean + " --out " + (dir / "bad").string() +
            " --kind lsp --norm l_inf --eps 0.03 --seed 1");
    CHECK(r.rc == 3);
    CHECK(r.out.find("l2") != std::string::npos);
  }

  TEST_CASE("validate names the corrupt container and exits with the schema code") {
    const fs::path dir = scratch_dir("cli-corrupt");
    const std::string clean = (dir / "clean").string();
    REQUIRE(run("gen-toy-data --out " + clean + " --seed 5" + kTinyData).rc == 0);

    const fs::path victim = dir / "clean" / "train_images.jt";
    std::string bytes = slurp(victim);
    bytes[bytes.size() / 2] ^= 0x5a;
    bytes.resize(bytes.size() - 3);
    std::ofstream(victim, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));

    const auto r = run("validate " + clean);
    CHECK(r.rc == 3);
    CHECK(r.out.find("train_images.jt") != std::string::npos);
  }

  TEST_CASE("experiment reruns with one seed serialize byte-identically") {
    const fs::path dir = scratch_dir("cli-exp");
    const std::string flags =
        kTinyData +
        " --surrogate-count 48 --forge-kind random_class_patch --T 25 --ddpm-width 8"
        " --ddpm-depth 1 --temb 8 --ddpm-steps 40 --ddpm-batch 8 --extractor-steps 30"
        " --N 1 --cls-width 8 --cls-epochs 2 --seed 31";
    REQUIRE(run("experiment --out " + (dir / "a").string() + flags).rc == 0);
    REQUIRE(run("experiment --out " + (dir / "b").string() + flags).rc == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(!slurp(dir / "a" / "metrics.csv").empty());

    const json rec = json::parse(slurp(dir / "a" / "record.json"));
    CHECK(rec.at("complete") == true);
    CHECK(rec.at("config").at("seeds").at("data") == 32);  // base seed + 1
    CHECK(rec.at("datasets").at("purified").at("source") ==
          "toy-f0-k4-s16-n48+24-seed32+random_class_patch");
  }

  TEST_CASE("config file fills flags and explicit flags win") {
    const fs::path dir = scratch_dir("cli-config");
    std::ofstream(dir / "gen.cfg") << "[gen-toy-data]\ntrain=48\ntest=24\nfamily=1\n";
    const auto r = run("gen-toy-data --config " + (dir / "gen.cfg").string() + " --out " +
                       (dir / "d").string() + " --seed 5 --family 0");
    CHECK(r.rc == 0);
    CHECK(r.out.find("toy-f0-k4-s16-n48+24-seed5") != std::string::npos);

    std::ofstream(dir / "bad.cfg") << "no_such_key=1\n";
    CHECK(run("gen-toy-data --config " + (dir / "bad.cfg").string() + " --out " +
              (dir / "e").string() + " --seed 5")
              .rc == 2);
  }

  TEST_CASE("evaluate prints a parseable accuracy line") {
    const fs::path dir = scratch_dir("cli-eval");
    const std::string clean = (dir / "clean").string();
    const std::string cls = (dir / "cls").string();
    REQUIRE(run("gen-toy-data --out " + clean + " --seed 5" + kTinyData).rc == 0);
    REQUIRE(run("train-classifier --data " + clean + " --out " + cls +
                " --seed 2 --epochs 2 --width 8")
                .rc == 0);

    const auto r = run("evaluate --model " + cls + " --data " + clean + " --split test --json " +
                       (dir / "eval.json").string());
    CHECK(r.rc == 0);
    double acc = -1.0;
    REQUIRE(std::sscanf(r.out.c_str(), "accuracy=%lf", &acc) == 1);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(json::parse(slurp(dir / "eval.json")).at("accuracy") == doctest::Approx(acc));
  }

  TEST_CASE("png-export and plot write real PNG files") {
    const fs::path dir = scratch_dir("cli-png");
    const std::string clean = (dir / "clean").string();
    REQUIRE(run("gen-toy-data --out " + clean + " --seed 5" + kTinyData).rc == 0);
    REQUIRE(run("png-export --in " + clean + " --out " + (dir / "sheet.png").string() +
                " --cols 8 --limit 16")
                .rc == 0);

    const std::string flags =
        kTinyData +
        " --surrogate-count 48 --forge-kind random_class_patch --T 25 --ddpm-width 8"
        " --ddpm-depth 1 --temb 8 --ddpm-steps 40 --ddpm-batch 8 --extractor-steps 30"
        " --N 1 --cls-width 8 --cls-epochs 2 --seed 31";
    REQUIRE(run("experiment --out " + (dir / "exp").string() + flags).rc == 0);
    REQUIRE(run("plot --record " + (dir / "exp" / "record.json").string() + " --out " +
                (dir / "plots").string())
                .rc == 0);

    const char magic[5] = "\x89PNG";
    for (const char* name : {"sheet.png", "plots/accuracy.png", "plots/curves.png",
                             "plots/psnr.png", "plots/iterations.png"}) {
      const std::string bytes = slurp(dir / name);
      REQUIRE_MESSAGE(bytes.size() > 8, name);
      CHECK_MESSAGE(bytes.compare(0, 4, magic, 4) == 0, name);
    }
  }
}
