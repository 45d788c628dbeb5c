// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <memory>
#include <regex>

#include <gtest/gtest.h>

#include "diffseg/errors.hpp"
#include "diffseg/io.hpp"
#include "diffseg/manipulate.hpp"
#include "diffseg/pipeline.hpp"
#include "test_util.hpp"

namespace diffseg::pipeline {
namespace {

TEST(Config, RoundTripAndHash) {
    const PipelineConfig c = smoke_config();
    const PipelineConfig back = PipelineConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.hash(), c.hash());
    EXPECT_EQ(c.hash().size(), 64U);
    EXPECT_NE(c.hash(), default_config().hash());

    PipelineConfig d = c;
    d.segnet.steps += 1;
    EXPECT_NE(d.hash(), c.hash());

    // Partial documents keep defaults for everything they omit.
    const auto partial = PipelineConfig::from_json({{"seed", 7}});
    EXPECT_EQ(partial.to_json(), PipelineConfig{}.to_json());
}

TEST(Config, RejectsUnknownSection) {
    nlohmann::json j = smoke_config().to_json();
    j["tokenizer"] = nlohmann::json::object();
    EXPECT_THROW(PipelineConfig::from_json(j), std::invalid_argument);
}

TEST(Config, ImageSizeFollowsPhantom) {
    nlohmann::json j = smoke_config().to_json();
    j["phantom"]["size"] = 48;
    const auto c = PipelineConfig::from_json(j);
    EXPECT_EQ(c.diffae.model.image_size, 48);
    EXPECT_EQ(c.segnet.net.image_size, 48);
}

TEST(GroundTruth, PathClassification) {
    EXPECT_TRUE(is_ground_truth_path("/data/run/dataset/gt/pos_0001.png"));
    EXPECT_TRUE(is_ground_truth_path("gt/x.png"));
    EXPECT_FALSE(is_ground_truth_path("/data/run/dataset/images/pos_0001.png"));
    EXPECT_FALSE(is_ground_truth_path("/data/gt_like/x.png"));
    EXPECT_FALSE(is_ground_truth_path("/data/gt/sub/x.png"));
}

TEST(GroundTruth, AuditSeesReads) {
    test::TempDir dir;
    io::ensure_dir(dir.path() / "gt");
    io::write_text(dir.path() / "gt" / "a.txt", "x");
    io::write_text(dir.path() / "b.txt", "y");
    io::ReadAudit outer;
    {
        io::ReadAudit inner;
        (void)io::read_text(dir.path() / "gt" / "a.txt");
        ASSERT_EQ(inner.reads().size(), 1U);
        EXPECT_TRUE(is_ground_truth_path(inner.reads()[0]));
    }
    (void)io::read_text(dir.path() / "b.txt");
    ASSERT_EQ(outer.reads().size(), 2U);
    EXPECT_FALSE(is_ground_truth_path(outer.reads()[1]));
}

TEST(TreeChecksum, ContentAndNames) {
    test::TempDir a;
    test::TempDir b;
    for (const auto* d : {&a, &b}) {
        io::ensure_dir(d->path() / "sub");
        io::write_text(d->path() / "x.txt", "one");
        io::write_text(d->path() / "sub" / "y.txt", "two");
    }
    EXPECT_EQ(tree_checksum(a.path()), tree_checksum(b.path()));
    io::write_text(b.path() / "sub" / "y.txt", "tw0");
    EXPECT_NE(tree_checksum(a.path()), tree_checksum(b.path()));
    io::write_text(b.path() / "sub" / "y.txt", "two");
    fs::rename(b.path() / "x.txt", b.path() / "z.txt");
    EXPECT_NE(tree_checksum(a.path()), tree_checksum(b.path()));
}

// One smoke run shared by the tests below.
class SmokeRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = std::make_unique<test::TempDir>();
        first_ = std::make_unique<RunManifest>(run_all(smoke_config(), {dir_->path(), false}));
    }
    static void TearDownTestSuite() {
        first_.reset();
        dir_.reset();
    }
    static std::unique_ptr<test::TempDir> dir_;
    static std::unique_ptr<RunManifest> first_;
};
std::unique_ptr<test::TempDir> SmokeRun::dir_;
std::unique_ptr<RunManifest> SmokeRun::first_;

TEST_F(SmokeRun, CompletesWithAllStages) {
    const RunManifest& m = *first_;
    ASSERT_TRUE(m.complete);
    ASSERT_EQ(m.stages.size(), stage_names().size());
    for (std::size_t i = 0; i < m.stages.size(); ++i) {
        EXPECT_EQ(m.stages[i].name, stage_names()[i]);
        EXPECT_EQ(m.stages[i].status, "done");
        EXPECT_FALSE(m.stages[i].outputs.empty()) << m.stages[i].name;
        EXPECT_TRUE(fs::exists(m.stage_dir(m.stages[i].name) / "stage.json"));
    }
    EXPECT_EQ(m.run_id, "run-" + smoke_config().hash().substr(0, 16));
    const RunManifest loaded = load_run(m.run_dir);
    EXPECT_EQ(loaded.canonical_json(), m.canonical_json());
}

TEST_F(SmokeRun, OnlyEvaluateReadsGroundTruth) {
    for (const auto& s : first_->stages) {
        if (s.name == "evaluate") {
            EXPECT_GT(s.gt_reads, 0U);
        } else {
            EXPECT_EQ(s.gt_reads, 0U) << s.name;
        }
        const auto listing = io::read_text(fs::path(first_->run_dir) / "reads" / (s.name + ".txt"));
        EXPECT_EQ(listing.find("/gt/") != std::string::npos, s.name == "evaluate") << s.name;
    }
}

TEST_F(SmokeRun, RerunIsCached) {
    const RunManifest again = run_all(smoke_config(), {dir_->path(), false});
    ASSERT_TRUE(again.complete);
    for (const auto& s : again.stages) {
        EXPECT_EQ(s.status, "skipped (cached)") << s.name;
    }
    EXPECT_EQ(again.canonical_json(), first_->canonical_json());
}

TEST_F(SmokeRun, SegnetChangeRerunsOnlyDownstream) {
    PipelineConfig c = smoke_config();
    c.segnet.steps = 12;
    const RunManifest m = run_all(c, {dir_->path(), false});
    ASSERT_TRUE(m.complete);
    EXPECT_NE(m.run_id, first_->run_id);
    for (const auto& s : m.stages) {
        const bool rerun = s.name == "segnet_train" || s.name == "evaluate";
        EXPECT_EQ(s.status, rerun ? "done" : "skipped (cached)") << s.name;
        EXPECT_EQ(s.key == first_->find(s.name)->key, !rerun) << s.name;
    }
}

TEST_F(SmokeRun, TamperedOutputIsRecomputed) {
    test::TempDir other;
    // Copy the cache so the shared fixture stays intact.
    fs::copy(dir_->path() / "cache", other.path() / "cache", fs::copy_options::recursive);
    const fs::path ckpt = other.path() / first_->find("diffae_train")->dir / "diffae.ckpt";
    {
        std::ofstream f(ckpt, std::ios::binary | std::ios::app);
        f << "junk";
    }
    const RunManifest m = run_all(smoke_config(), {other.path(), false});
    EXPECT_EQ(m.find("phantom")->status, "skipped (cached)");
    EXPECT_EQ(m.find("diffae_train")->status, "done");
    EXPECT_EQ(m.canonical_json(), first_->canonical_json());
}

TEST_F(SmokeRun, ReportGatesAndIsStable) {
    const std::string a = report(*first_);
    const std::string b = report(*first_);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(fs::exists(fs::path(first_->run_dir) / "report.md"));

    const std::regex line(R"(alpha_star = (\S+))");
    std::size_t count = 0;
    std::string value;
    for (auto it = std::sregex_iterator(a.begin(), a.end(), line); it != std::sregex_iterator(); ++it) {
        ++count;
        value = (*it)[1].str();
    }
    ASSERT_EQ(count, 1U);
    const auto sweep = manipulate::read_sweep(first_->stage_dir("alpha_sweep"));
    EXPECT_EQ(std::stod(value), sweep.alpha_star);
    const auto alphas = smoke_config().sweep.alphas;
    EXPECT_NE(std::find(alphas.begin(), alphas.end(), sweep.alpha_star), alphas.end());

    RunManifest partial = *first_;
    partial.stages.pop_back();
    partial.complete = false;
    EXPECT_THROW(report(partial), InvalidState);
    partial = *first_;
    partial.stages.back().status = "failed";
    EXPECT_THROW(report(partial), InvalidState);
}

TEST(PipelineFailure, UntrainedDiffAEStopsAtClassifier) {
    test::TempDir dir;
    PipelineConfig c = smoke_config();
    c.diffae.train.steps = 0;
    try {
        (void)run_all(c, {dir.path(), false});
        FAIL() << "run_all should have thrown";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "classifier_train");
        EXPECT_NE(std::string(e.what()).find("diffae.ckpt"), std::string::npos);
    }
    const RunManifest m = load_run(dir.path() / ("run-" + c.hash().substr(0, 16)));
    EXPECT_FALSE(m.complete);
    ASSERT_EQ(m.stages.size(), 3U);
    EXPECT_EQ(m.stages.back().status, "failed");
    EXPECT_THROW(report(m), InvalidState);
    EXPECT_EQ(resolve_run(dir.path(), m.run_id), dir.path() / m.run_id);
    EXPECT_THROW(resolve_run(dir.path(), "run-nope"), InvalidState);
}

}  // namespace
}  // namespace diffseg::pipeline
