#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "ptlab/errors.hpp"
#include "ptlab/io.hpp"

using namespace ptlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / (std::string("ptlab_io_") + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("format_double round trips") {
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
        CHECK(std::strtod(io::format_double(v).c_str(), nullptr) == v);
    }
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
}

TEST_CASE("weights and datasets round trip through JSON text") {
    Rng rng(2);
    TransformerStack one{{init_layer({.d = 3, .heads = 2, .head_size = 2, .hidden = 4}, rng)}};
    const auto j1 = io::stack_to_json(one);
    CHECK(j1.contains("heads"));
    CHECK(j1.at("d") == 3);
    CHECK(io::stack_to_json(io::stack_from_json(io::Json::parse(j1.dump()))) == j1);
    const auto back = io::stack_from_json(io::Json::parse(j1.dump()));
    CHECK(back.layers[0].heads[1].W_o == one.layers[0].heads[1].W_o);
    CHECK(back.layers[0].mlp.b_1 == one.layers[0].mlp.b_1);

    TransformerStack two = one;
    two.layers.push_back(init_layer({.d = 3}, rng));
    const auto j2 = io::stack_to_json(two);
    CHECK(j2.contains("layers"));
    CHECK(io::stack_from_json(io::Json::parse(j2.dump())).layers.size() == 2);

    SeqDataset ds;
    ds.examples.push_back({rng.normal_matrix(3, 2), rng.normal_matrix(3, 2)});
    ds.loss_mask = {1};
    const auto jd = io::dataset_to_json(ds, {{"shared_token", "last"}});
    const auto ds2 = io::dataset_from_json(io::Json::parse(jd.dump()));
    CHECK(ds2.examples[0].X == ds.examples[0].X);
    CHECK(ds2.examples[0].Y == ds.examples[0].Y);
    CHECK(ds2.loss_mask == ds.loss_mask);
}

TEST_CASE("malformed inputs are rejected") {
    CHECK_THROWS_AS(io::matrix_from_json(io::Json::parse("[[1,2],[3]]")), Error);
    CHECK_THROWS_AS(io::stack_from_json(io::Json::parse("{\"d\": 2}")), Error);
    CHECK_THROWS_AS(io::dataset_from_json(io::Json::parse(
                        R"({"d":1,"m":1,"loss_mask":[3],"examples":[{"X":[[1]],"Y":[[1]]}]})")),
                    Error);
    CHECK_THROWS_AS(io::parse_sweep_csv("wrong,header\n"), Error);
    CHECK_THROWS_AS(io::parse_train_log_csv("step,loss,prompt_spectral_norm\n1,abc,\n"), Error);
}

TEST_CASE("reports and certificates round trip") {
    LipschitzReport r{{1.5, 2.5}, 3.0, 0.9, 7.6, {.D_per_layer = {2.0}, .D_X = 2.0, .m = 3}};
    const auto rj = io::report_to_json(r);
    CHECK(io::report_to_json(io::report_from_json(io::Json::parse(rj.dump()))) == rj);

    InvertibilityCertificate c{{0.5}, {0.9}, true, 0.1, {.D_per_layer = {1.0}, .m = 2}};
    const auto cj = io::certificate_to_json(c);
    CHECK(io::certificate_to_json(io::invertibility_certificate_from_json(io::Json::parse(cj.dump()))) == cj);

    UnlearnableCertificate u{{1, 0}, {0, 1}, {1e-6, 2e-6}, 0.3, {1, 2}, {3, 4}, 2};
    const auto uj = io::certificate_to_json(u);
    CHECK(io::certificate_to_json(io::unlearnable_certificate_from_json(io::Json::parse(uj.dump()))) == uj);
}

TEST_CASE("CSV round trips") {
    TrainRecord rec;
    rec.loss_history = {{0, 0.5}, {100, 1.0 / 3.0}, {150, 1e-300}};
    rec.prompt_spectral_norm_history = {{0, 1.0}, {100, 2.0 / 3.0}, {150, 7.0}};
    const auto rows = io::parse_train_log_csv(io::train_log_csv(rec));
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].loss == 1.0 / 3.0);
    CHECK(rows[1].prompt_spectral_norm == 2.0 / 3.0);
    CHECK(rows[2].step == 150);

    rec.prompt_spectral_norm_history.clear();
    const std::string text = io::train_log_csv(rec);
    CHECK(text.find("100,0.3333333333333333,\n") != std::string::npos);
    for (const auto& row : io::parse_train_log_csv(text)) CHECK_FALSE(row.has_norm);

    std::vector<SweepRow> sweep{{.prompt_length = 5, .mean_mse = 0.25, .std_mse = 1e-3, .n_diverged = 1},
                                {.prompt_length = 0, .mean_mse = std::nan(""), .std_mse = 0.0}};
    const auto back = io::parse_sweep_csv(io::sweep_csv(sweep));
    REQUIRE(back.size() == 2);
    CHECK(back[0].mean_mse == 0.25);
    CHECK(back[0].n_diverged == 1);
    CHECK(std::isnan(back[1].mean_mse));
}

TEST_CASE("atomic writes, hashing and manifests") {
    const auto dir = scratch_dir("files");
    const auto f = dir / "out.json";
    io::write_atomic(f, "first");
    io::write_atomic(f, "second");
    CHECK(io::read_text(f) == "second");
    CHECK_FALSE(fs::exists(dir / "out.json.tmp"));
    CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(io::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(io::sha256_file(f) == io::sha256_hex("second"));

    io::RunManifest m{.command = "bound", .seed = 7, .inputs = {{"w.json", "00"}}, .outputs = {{"r.json", "11"}}};
    const auto mj = io::manifest_to_json(m);
    CHECK(io::manifest_to_json(io::manifest_from_json(io::Json::parse(mj.dump()))) == mj);
    CHECK(io::manifest_path(f).filename() == "out.json.manifest.json");
    CHECK_THROWS_AS(io::read_text(dir / "missing.json"), Error);
}
