#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "advgen/experiment.hpp"
#include "advgen/image_io.hpp"
#include "advgen/presets.hpp"

using namespace advgen;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string capture = testing::TempDir() + "cli_capture_" + std::to_string(counter++);
    const std::string cmd = std::string(ADVGEN_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
    const int raw = std::system(cmd.c_str());
    std::ifstream in(capture, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WEXITSTATUS(raw), ss.str()};
}

std::map<std::string, std::string> read_tree(const std::string& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        files[fs::relative(entry.path(), dir).string()] = ss.str();
    }
    return files;
}

// Writes a small inpainting job (inputs plus config) and returns the config path.
std::string write_attack_fixture(const std::string& dir, const std::string& out_dir) {
    fs::create_directories(dir);
    save_image(standard_test_image(16, 16), dir + "/input.pgm");
    save_image(center_mask(16, 16, 8, 8), dir + "/mask.pgm");

    json cfg;
    cfg["model"] = {{"id", "diffusion-fill"}, {"k_iters", 10}};
    cfg["conditions"] = json::array(
        {json{{"name", "image"},
              {"path", dir + "/input.pgm"},
              {"role", "image"},
              {"perturbable", true},
              {"perturb_mask", dir + "/mask.pgm"}},
         json{{"name", "mask"}, {"path", dir + "/mask.pgm"}, {"role", "mask"},
              {"perturbable", false}}});
    cfg["attack"] = {{"steps", 5}, {"epsilon", 0.01}, {"delta", 1e-4},
                     {"c_min", -0.09}, {"c_max", 0.09}, {"seed", 9}, {"loss", "l1"}};
    cfg["samples"] = 2;
    cfg["out_dir"] = out_dir;
    const std::string path = dir + "/config.json";
    write_json_file(cfg, path);
    return path;
}

}  // namespace

TEST(Cli, NoArgumentsPrintsUsageAndExits2) {
    CmdResult r = run_cli("");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownSubcommandExits2) {
    CmdResult r = run_cli("frobnicate");
    EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, BadFlagExits2) {
    CmdResult r = run_cli("gradcheck --no-such-flag");
    EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, GradcheckPassesAndPrintsMaxError) {
    CmdResult r = run_cli("gradcheck --cases 25");
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("max relative error"), std::string::npos);
}

TEST(Cli, AttackIsByteDeterministic) {
    const std::string dir = testing::TempDir() + "attack_fixture";
    const std::string out_dir = dir + "/out";
    const std::string config = write_attack_fixture(dir, out_dir);

    CmdResult first = run_cli("attack --config " + config);
    ASSERT_EQ(first.exit_code, 0) << first.output;
    const auto tree1 = read_tree(out_dir);
    ASSERT_GE(tree1.size(), 7u);  // config, default, 2 samples, 2 traces, sheet, report
    EXPECT_TRUE(tree1.count("diversity.json"));
    EXPECT_TRUE(tree1.count("contact_sheet.pgm"));
    EXPECT_TRUE(tree1.count("sample_00.pfm"));
    EXPECT_TRUE(tree1.count("trace_01.csv"));

    CmdResult second = run_cli("attack --config " + config);
    ASSERT_EQ(second.exit_code, 0) << second.output;
    const auto tree2 = read_tree(out_dir);
    EXPECT_EQ(tree1, tree2);
}

TEST(Cli, TraceCsvHasContractHeader) {
    const std::string dir = testing::TempDir() + "attack_fixture_csv";
    const std::string out_dir = dir + "/out";
    const std::string config = write_attack_fixture(dir, out_dir);
    ASSERT_EQ(run_cli("attack --config " + config).exit_code, 0);
    std::ifstream in(out_dir + "/trace_00.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,loss,eps,linf_perturbation,l1_output_delta");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    EXPECT_EQ(rows, 5);
}

TEST(Cli, AttackFlagOverridesApply) {
    const std::string dir = testing::TempDir() + "attack_fixture_flags";
    const std::string out_dir = dir + "/out_flags";
    const std::string config = write_attack_fixture(dir, dir + "/ignored");
    CmdResult r = run_cli("attack --config " + config + " --out " + out_dir +
                          " --steps 3 --samples 1 --loss var --epsilon 0.02:0.04 --seed 77");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    std::ifstream in(out_dir + "/config.json");
    json echoed;
    in >> echoed;
    EXPECT_EQ(echoed["attack"]["steps"], 3);
    EXPECT_EQ(echoed["attack"]["loss"], "var");
    EXPECT_EQ(echoed["samples"], 1);
    EXPECT_EQ(echoed["attack"]["epsilon"], json::array({0.02, 0.04}));
    EXPECT_EQ(echoed["attack"]["seed"], 77);
}

TEST(Cli, DirectionalAttackWithEmbeddingPair) {
    const std::string dir = testing::TempDir() + "attack_fixture_pair";
    const std::string out_dir = dir + "/out";
    const std::string config = write_attack_fixture(dir, out_dir);
    {
        std::ofstream ref(dir + "/e_ref.txt"), src(dir + "/e_src.txt");
        ref << "1\n0\n0\n0\n0\n0\n0\n0\n";
        src << "0\n1\n0\n0\n0\n0\n0\n0\n";
    }
    CmdResult r = run_cli("attack --config " + config + " --loss directional --ref-embedding " +
                          dir + "/e_ref.txt --ref-embedding " + dir + "/e_src.txt --samples 1");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_TRUE(fs::exists(out_dir + "/trace_00.csv"));

    // one embedding alone is not a valid reference form
    CmdResult bad = run_cli("attack --config " + config + " --loss directional --ref-embedding " +
                            dir + "/e_ref.txt --samples 1");
    EXPECT_EQ(bad.exit_code, 1);
    EXPECT_NE(bad.output.find("reference"), std::string::npos);
}

TEST(Cli, MalformedEpsilonFlagIsAUsageError) {
    const std::string dir = testing::TempDir() + "attack_fixture_badeps";
    const std::string config = write_attack_fixture(dir, dir + "/out");
    CmdResult r = run_cli("attack --config " + config + " --epsilon nope");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("--epsilon"), std::string::npos);
}

TEST(Cli, NoOpPipelineSampleBitEqualsDefault) {
    // zero-gradient job: identity model (empty mask), variance loss, no init
    // noise, one step. The flat image must hold a dyadic value: for anything
    // else the mean picks up rounding dust, the variance gradient becomes
    // +-1e-17 instead of 0, and the sign step amplifies it to a full move.
    const std::string dir = testing::TempDir() + "noop_fixture";
    fs::create_directories(dir);
    save_image(Tensor(Shape{8, 8}, 0.0), dir + "/flat.pgm");
    save_image(Tensor(Shape{8, 8}, 0.0), dir + "/empty_mask.pgm");
    json cfg;
    cfg["model"] = {{"id", "diffusion-fill"}, {"k_iters", 5}};
    cfg["conditions"] = json::array(
        {json{{"name", "image"}, {"path", dir + "/flat.pgm"}, {"role", "image"},
              {"perturbable", true}},
         json{{"name", "mask"}, {"path", dir + "/empty_mask.pgm"}, {"role", "mask"},
              {"perturbable", false}}});
    cfg["attack"] = {{"steps", 1}, {"epsilon", 0.01}, {"delta", 0.0}, {"seed", 3},
                     {"loss", "var"}};
    cfg["samples"] = 1;
    cfg["out_dir"] = dir + "/out";
    write_json_file(cfg, dir + "/config.json");

    ASSERT_EQ(run_cli("attack --config " + dir + "/config.json").exit_code, 0);
    const auto tree = read_tree(dir + "/out");
    ASSERT_TRUE(tree.count("sample_00.pfm"));
    ASSERT_TRUE(tree.count("default.pfm"));
    EXPECT_EQ(tree.at("sample_00.pfm"), tree.at("default.pfm"));
}

TEST(Cli, AttackMissingInputFails1) {
    CmdResult r = run_cli("attack --config /nonexistent/config.json");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("error"), std::string::npos);
}

TEST(Cli, MetricsEmitsReport) {
    const std::string dir = testing::TempDir() + "metrics_fixture";
    fs::create_directories(dir);
    // mid-range constants: an all-zero image has no embedding direction
    save_image(Tensor(Shape{8, 8}, 0.25), dir + "/a.pgm");
    save_image(Tensor(Shape{8, 8}, 0.75), dir + "/b.pgm");
    CmdResult r = run_cli("metrics " + dir + "/a.pgm " + dir + "/b.pgm");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    json j = json::parse(r.output);
    // 0.25 and 0.75 quantize to bytes 64 and 191
    EXPECT_NEAR(j["mean_pairwise_l1"].get<double>(), 127.0, 1e-9);
    EXPECT_EQ(j["sample_count"], 2);
}

TEST(Cli, MetricsNeedsTwoImages) {
    const std::string dir = testing::TempDir() + "metrics_fixture_one";
    fs::create_directories(dir);
    save_image(Tensor(Shape{8, 8}, 0.0), dir + "/only.pgm");
    CmdResult r = run_cli("metrics " + dir + "/only.pgm");
    EXPECT_EQ(r.exit_code, 2);  // arity enforced at flag parsing
}

TEST(Cli, DivergencePairCountAndDeterminism) {
    CmdResult r = run_cli("divergence --trials 3 --seed 5");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("sign: trials 3, distances 3"), std::string::npos);
    EXPECT_NE(r.output.find("adam: trials 3, distances 3"), std::string::npos);
    EXPECT_NE(r.output.find("divergence ratio"), std::string::npos);

    CmdResult again = run_cli("divergence --trials 3 --seed 5");
    EXPECT_EQ(r.output, again.output);
}

TEST(Cli, CompareOptimizerWritesComparisonTable) {
    const std::string dir = testing::TempDir() + "compare_fixture";
    const std::string out_dir = dir + "/out";
    const std::string config = write_attack_fixture(dir, out_dir);
    CmdResult r = run_cli("compare-optimizer --config " + config + " --steps 3 --samples 2");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    std::ifstream in(out_dir + "/comparison.csv");
    ASSERT_TRUE(in.good());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,sign_loss,sign_frechet,adam_loss,adam_frechet");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    EXPECT_EQ(rows, 3);
}
