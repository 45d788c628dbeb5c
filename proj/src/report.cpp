// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>

#include "diffseg/errors.hpp"
#include "diffseg/io.hpp"
#include "diffseg/manipulate.hpp"
#include "diffseg/pipeline.hpp"

namespace diffseg::pipeline {

namespace {

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string number(const nlohmann::json& j, const char* key, int digits = 4) {
    if (!j.contains(key) || !j.at(key).is_number()) {
        return "n/a";
    }
    return fmt(j.at(key).get<double>(), digits);
}

}  // namespace

std::string report(const RunManifest& run) {
    const StageRecord* eval = run.find("evaluate");
    if (!run.complete || eval == nullptr || eval->status == "failed") {
        throw InvalidState("run " + run.run_id + " has not completed its evaluate stage");
    }
    const fs::path run_dir = run.run_dir;
    std::ostringstream out;
    out << "# Run " << run.run_id << "\n\n";
    out << "Config hash: `" << run.config_hash << "`\n\n";

    out << "## Stages\n\n| stage | status | key | seed |\n|---|---|---|---|\n";
    for (const auto& s : run.stages) {
        out << "| " << s.name << " | " << s.status << " | `" << s.key.substr(0, 16) << "` | " << s.seed << " |\n";
    }

    const auto& dae = run.find("diffae_train")->summary;
    out << "\n## Diffusion autoencoder\n\n";
    out << "- best validation loss: " << number(dae, "best_val_loss") << " (step "
        << dae.value("best_step", 0) << ")\n";
    out << "- round-trip PSNR on training slices: mean " << number(dae, "psnr_mean", 2) << " dB, min "
        << number(dae, "psnr_min", 2) << " dB\n";

    out << "\n## Latent classifier\n\n";
    out << "- validation F1: " << number(run.find("classifier_train")->summary, "val_f1") << "\n";

    const auto sweep = manipulate::read_sweep(run.stage_dir("alpha_sweep"));
    out << "\n## Manipulation strength sweep\n\n| alpha | FID | generated |\n|---|---|---|\n";
    for (const auto& row : sweep.table) {
        out << "| " << fmt(row.alpha, 3) << " | " << fmt(row.fid, 6) << " | " << row.n_generated << " |\n";
    }
    char alpha_line[64];
    std::snprintf(alpha_line, sizeof alpha_line, "%.17g", sweep.alpha_star);
    out << "\nalpha_star = " << alpha_line << "\n";

    const auto& pairs = run.find("pair_generation")->summary;
    const auto& masks = run.find("maskgen")->summary;
    out << "\n## Pseudo pairs and masks\n\n";
    out << "- pairs: " << pairs.value("pairs", 0) << "\n";
    out << "- mean classifier score: original " << number(pairs, "mean_score_original") << ", edited "
        << number(pairs, "mean_score_fibrotic") << "\n";
    out << "- empty pseudo masks: " << masks.value("empty", 0) << "\n";
    out << "- mean pseudo-mask area: " << number(masks, "mean_foreground", 1) << " px\n";

    const auto& seg = run.find("segnet_train")->summary;
    out << "\n## Segmentation training\n\n| fold | validation Dice |\n|---|---|\n";
    if (seg.contains("val_dice")) {
        for (std::size_t f = 0; f < seg.at("val_dice").size(); ++f) {
            out << "| " << f << " | " << fmt(seg.at("val_dice")[f].get<double>()) << " |\n";
        }
    }
    out << "\nInternal hold-out Dice vs pseudo masks: " << number(seg, "internal_test_dice") << "\n";

    const fs::path eval_dir = run.stage_dir("evaluate");
    const auto ev = segnet::EvalReport::from_json(io::read_json(eval_dir / "report.json"));
    out << "\n## Test Dice against ground truth\n\n";
    out << "Model: fold " << ev.model_fold << ", n = " << ev.n << "\n\n";
    out << "| mean | median | Q1 | Q3 | IQR |\n|---|---|---|---|---|\n";
    out << "| " << fmt(ev.mean) << " | " << fmt(ev.median) << " | " << fmt(ev.q25) << " | " << fmt(ev.q75) << " | "
        << fmt(ev.q75 - ev.q25) << " |\n\n";
    int bins[10] = {};
    for (double d : ev.dice) {
        ++bins[std::min(9, static_cast<int>(d * 10.0))];
    }
    out << "| Dice | slices |\n|---|---|\n";
    for (int b = 0; b < 10; ++b) {
        out << "| " << fmt(b / 10.0, 1) << "-" << fmt((b + 1) / 10.0, 1) << " | " << bins[b] << " |\n";
    }
    out << "\n<details><summary>per-slice Dice</summary>\n\n| slice | Dice |\n|---|---|\n";
    for (std::size_t i = 0; i < ev.ids.size(); ++i) {
        out << "| " << ev.ids[i] << " | " << fmt(ev.dice[i]) << " |\n";
    }
    out << "\n</details>\n";

    const auto ab = io::read_json(eval_dir / "ablation.json");
    out << "\n## Refinement ablation\n\n";
    out << "Pairs: " << ab.value("pairs", 0) << "\n\n| masks | mean Dice |\n|---|---|\n";
    out << "| refined | " << number(ab, "mean_refined") << " |\n";
    out << "| raw Otsu | " << number(ab, "mean_raw_otsu") << " |\n";

    // Panels are copied next to the report so the directory stands alone.
    out << "\n## Panels\n\ninput | pseudo mask (blank: test slices have none) | prediction | ground truth\n\n";
    const fs::path panel_src = eval_dir / "panels";
    const fs::path panel_dst = run_dir / "panels";
    io::ensure_dir(panel_dst);
    std::vector<fs::path> panels;
    if (fs::exists(panel_src)) {
        for (const auto& e : fs::directory_iterator(panel_src)) {
            panels.push_back(e.path());
        }
    }
    std::sort(panels.begin(), panels.end());
    for (std::size_t i = 0; i < panels.size(); ++i) {
        fs::copy_file(panels[i], panel_dst / panels[i].filename(), fs::copy_options::overwrite_existing);
        const std::string stem = panels[i].stem().string();
        const double d = [&] {
            for (std::size_t k = 0; k < ev.ids.size(); ++k) {
                if (ev.ids[k] == stem) {
                    return ev.dice[k];
                }
            }
            return -1.0;
        }();
        out << "![" << stem << " Dice " << fmt(d, 3) << "](panels/" << panels[i].filename().string() << ")\n";
    }

    const std::string text = out.str();
    io::write_text(run_dir / "report.md", text);
    return text;
}

}  // namespace diffseg::pipeline
