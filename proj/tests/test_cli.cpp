#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rmdl/dataio.hpp"
#include "support.hpp"

using namespace rmdl;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(RMDL_CLI_PATH) + " " + args + " 2>/dev/null";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

/// 8×8 images whose label is the bright quadrant (0–3), plus a single-image
/// file for prediction.
struct ImageData {
    fs::path root = fs::temp_directory_path() / "rmdl_cli_test";
    fs::path data = root / "data";

    ImageData() {
        fs::remove_all(root);
        fs::create_directories(data);
        Rng rng(1);
        const std::uint32_t n = 80;
        IdxArray images{kIdxImageMagic, {n, 8, 8}, {}}, labels{kIdxLabelMagic, {n}, {}};
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint8_t q = static_cast<std::uint8_t>(i % 4);
            labels.data.push_back(q);
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    const bool bright = (y / 4) * 2 + x / 4 == q;
                    images.data.push_back(static_cast<std::uint8_t>(bright ? 200 + rng.index(56) : rng.index(40)));
                }
        }
        write_idx_file(data / "train-images-idx3-ubyte", images);
        write_idx_file(data / "train-labels-idx1-ubyte", labels);
        IdxArray one{kIdxImageMagic, {1, 8, 8}, std::vector<std::uint8_t>(images.data.begin(), images.data.begin() + 64)};
        write_idx_file(root / "one.idx", one);
        IdxArray wrong{kIdxImageMagic, {1, 5, 5}, std::vector<std::uint8_t>(25, 0)};
        write_idx_file(root / "wrong.idx", wrong);
    }
    ~ImageData() { fs::remove_all(root); }
};

const char* kSmallRanges = " --dnn-nodes 8,16 --cnn-filters 2,4 --rnn-units 4,8 --dnn-layers 1,2";

} // namespace

TEST_CASE("sample prints one line per model, deterministically") {
    const Run a = run("sample --models 1,1,1 --seed 7");
    CHECK(a.code == 0);
    CHECK(count_lines(a.out) == 3);
    CHECK(a.out.find("DNN") != std::string::npos);
    CHECK(run("sample --models 1,1,1 --seed 7").out == a.out);
    CHECK(run("sample --models 1,1,1 --seed 8").out != a.out);

    const Run j = run("sample --models 2,0,1 --seed 7 --json");
    CHECK(j.code == 0);
    const json doc = json::parse(j.out);
    CHECK(doc["n"] == 3);
    CHECK(doc["models"].size() == 3);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run("sample --models 0,0,0").code == 2);
    CHECK(run("sample --models 1,x,1").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("train --task image").code == 2);
    CHECK(run("sample --dnn-layers 5,1").code == 2);
}

TEST_CASE("help lists a default for every flag") {
    const Run h = run("train --help");
    CHECK(h.code == 0);
    std::istringstream in(h.out);
    std::string line;
    std::size_t flags = 0;
    while (std::getline(in, line)) {
        if (line.find("  --") != 0) continue;
        ++flags;
        CAPTURE(line);
        CHECK(line.find('[') != std::string::npos);
    }
    CHECK(flags > 10);
}

TEST_CASE("train, evaluate, predict") {
    ImageData d;
    const fs::path out = d.root / "run1";
    const std::string train_args = "train --task image --data " + d.data.string() + " --out " + out.string() +
                                   " --models 1,1,1 --epochs 2 --seed 42 --serial" + kSmallRanges;
    const Run t = run(train_args);
    REQUIRE(t.code == 0);
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(count_lines(read_file(out / "metrics.csv")) == 13);
    const auto pos = t.out.find("ensemble val_accuracy ");
    REQUIRE(pos != std::string::npos);
    const double train_acc = std::stod(t.out.substr(pos + 22));

    const Run e = run("evaluate --model " + out.string() + " --data " + d.data.string() + " --split val --json");
    REQUIRE(e.code == 0);
    const json report = json::parse(e.out);
    CHECK(report["accuracy"].get<double>() == doctest::Approx(train_acc).epsilon(1e-4));
    CHECK(report.at("models").size() == 3);
    CHECK(report.at("n") == 3);
    CHECK(report["error_rate"].get<double>() == 1.0 - report["accuracy"].get<double>());

    const Run p = run("predict --model " + out.string() + " --image " + (d.root / "one.idx").string() + " --json");
    REQUIRE(p.code == 0);
    const json pred = json::parse(p.out);
    CHECK(pred.contains("label"));
    CHECK(pred["n"] == 3);
    std::size_t votes = 0;
    for (const auto& [k, v] : pred["votes"].items()) votes += v.get<std::size_t>();
    CHECK(votes == 3);

    CHECK(run("predict --model " + out.string() + " --image " + (d.root / "wrong.idx").string()).code == 3);
    CHECK(run("train --task image --data " + (d.root / "nope").string() + " --out " + (d.root / "x").string()).code ==
          3);

    const fs::path again = d.root / "run2";
    std::string rerun = train_args;
    rerun.replace(rerun.find(out.string()), out.string().size(), again.string());
    REQUIRE(run(rerun).code == 0);
    for (const char* f : {"model_0.bin", "model_1.bin", "model_2.bin", "metrics.csv", "manifest.json"})
        CHECK(read_file(out / f) == read_file(again / f));

    std::ofstream(out / "model_2.bin", std::ios::app) << "junk";
    CHECK(run("evaluate --model " + out.string() + " --data " + d.data.string()).code == 4);
}

TEST_CASE("text task end to end") {
    const fs::path root = fs::temp_directory_path() / "rmdl_cli_text";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream csv(root / "corpus.csv");
        csv << "label,text\n";
        for (int i = 0; i < 40; ++i)
            csv << (i % 2 ? "space,\"orbit rocket launch, star\"\n" : "food,\"bread butter soup, salt\"\n");
    }
    const Run t = run("train --task text --data " + (root / "corpus.csv").string() + " --out " +
                      (root / "run").string() + " --models 1,1,1 --epochs 1 --max-len 8 --embedding-dim 4 --serial" +
                      kSmallRanges);
    CHECK(t.code == 0);
    const Run p = run("predict --model " + (root / "run").string() + " --text \"rocket star orbit\" --json");
    CHECK(p.code == 0);
    if (p.code == 0) CHECK(json::parse(p.out).contains("class"));
    fs::remove_all(root);
}
