// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/archive.hpp"
#include "persona/checkpoint.hpp"
#include "persona/errors.hpp"
#include "persona/fusion.hpp"
#include "persona/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace persona;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("persona_ck_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const testbed::ToyDenoiser& model() {
    static const testbed::ToyDenoiser m;
    return m;
}

AdapterCheckpoint small_checkpoint(const std::string& name, const std::string& adapter = "krona_wed") {
    testbed::DatasetSpec spec;
    spec.subject = testbed::builtin_shape(name);
    RunConfig c;
    c.concept_name = name;
    c.adapter = adapter;
    c.train_steps = 2;
    return pipeline::train_single(c, testbed::make_dataset(spec, 2), model()).checkpoint;
}

}  // namespace

TEST(Archive, BitExactRoundTripIncludingSpecialValues) {
    NamedArrayArchive a;
    a.set("format", "test");
    Matrix m(2, 3);
    m << -0.0, std::numeric_limits<double>::infinity(), 1e-310, std::nextafter(1.0, 2.0), -3.5, 0.1;
    a.put("m", m);
    a.put("empty", Matrix(0, 4));
    const auto dir = scratch("archive");
    a.save(dir / "a.pnar");
    const auto b = NamedArrayArchive::load(dir / "a.pnar");
    EXPECT_TRUE(a == b);
    EXPECT_TRUE(std::signbit(b.array("m")(0, 0)));
    EXPECT_EQ(b.array("empty").cols(), 4);
}

TEST(Archive, RejectsBadKeysAndTruncation) {
    NamedArrayArchive a;
    EXPECT_THROW(a.set("bad key", "v"), ConfigError);
    EXPECT_THROW(a.set("k", "line\nbreak"), ConfigError);
    a.put("x", Matrix::Ones(4, 4));
    const auto dir = scratch("trunc");
    a.save(dir / "a.pnar");
    fs::resize_file(dir / "a.pnar", fs::file_size(dir / "a.pnar") - 8);
    EXPECT_THROW(NamedArrayArchive::load(dir / "a.pnar"), DataError);
    EXPECT_THROW(NamedArrayArchive::load(dir / "missing.pnar"), DataError);
}

TEST(AdapterCheckpoint, RoundTripEveryKind) {
    for (const char* kind : {"krona_wed", "krona", "lora"}) {
        const auto ck = small_checkpoint("redring", kind);
        const auto dir = scratch(std::string("ad_") + kind);
        ck.save(dir / "adapter.pnar");
        const auto back = AdapterCheckpoint::load(dir / "adapter.pnar", model());
        EXPECT_TRUE(back.to_archive() == ck.to_archive()) << kind;
        for (const auto& [layer, d] : ck.deltas()) EXPECT_TRUE(bitwise_equal(back.deltas().at(layer), d));
        EXPECT_EQ(read_model_config(dir / "adapter.pnar").seed, model().config().seed);
    }
}

TEST(AdapterCheckpoint, ThetaMismatchRejected) {
    const auto ck = small_checkpoint("redring");
    testbed::ModelConfig other;
    other.seed = 5;
    EXPECT_THROW(AdapterCheckpoint::from_archive(ck.to_archive(), testbed::ToyDenoiser(other)), DataError);
}

TEST(FusedModel, RoundTripAndResidualTable) {
    const std::vector<AdapterCheckpoint> two = {small_checkpoint("redring"), small_checkpoint("bluesquare")};
    const auto fused = fusion::fuse_model(model(), two);
    const auto dir = scratch("fused");
    fused.save(dir / "fused.pnar");
    const auto back = FusedModel::load(dir / "fused.pnar", model());
    EXPECT_TRUE(back.to_archive() == fused.to_archive());
    ASSERT_EQ(back.residuals.size(), fused.residuals.size());
    for (std::size_t i = 0; i < fused.residuals.size(); ++i) {
        EXPECT_EQ(back.residuals[i].relative, fused.residuals[i].relative);
    }
    std::ifstream table(dir / "fusion.residuals");
    std::string line;
    int lines = 0;
    while (std::getline(table, line)) ++lines;
    EXPECT_EQ(lines, static_cast<int>(fused.residuals.size()) + 1);
    EXPECT_THROW(AdapterCheckpoint::load(dir / "fused.pnar", model()), DataError);
}

TEST(Materialize, IsBasePlusDelta) {
    const auto ck = small_checkpoint("redring");
    const auto deltas = ck.deltas();
    const auto w = materialize(model(), deltas);
    const auto& [layer, delta] = *deltas.begin();
    const auto base = model().parameter(layer);
    EXPECT_TRUE(bitwise_equal(w.weight(layer, base).value(), base + delta));
}
