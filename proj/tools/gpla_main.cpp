#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "gpla/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"block-pushing grounding and preference-alignment pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = 0;

    struct Sub {
        gpla::cli::Stage stage;
        CLI::App* cmd;
    };
    std::vector<Sub> subs;
    using gpla::cli::Stage;
    const std::pair<Stage, const char*> stages[] = {
        {Stage::gen, "generate the synthetic block-pushing dataset"},
        {Stage::train_grounding, "train the contrastive grounding model"},
        {Stage::train_sup, "supervised pretraining of both policy halves"},
        {Stage::gpla_train, "preference-align the instruction model against grounding scores"},
        {Stage::rollout, "decode instructions and action chunks on a dataset split"},
        {Stage::score, "grounding-score ground-truth windows of a split"},
        {Stage::embed, "export grounding embeddings and a 2D PCA projection"},
        {Stage::eval, "aggregate rollout metrics into the report CSV"},
    };
    for (const auto& [stage, desc] : stages) {
        CLI::App* cmd = app.add_subcommand(gpla::cli::stage_name(stage), desc);
        cmd->add_option("--config", config_path, "path to a key = value config file");
        cmd->add_option("--seed", seed, "override the config seed")->check(CLI::NonNegativeNumber);
        cmd->add_option("--out", out_dir, "run output directory");
        subs.push_back({stage, cmd});
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const Sub* chosen = nullptr;
        for (const Sub& s : subs)
            if (s.cmd->parsed()) chosen = &s;
        if (!chosen) throw gpla::ConfigError("no stage selected");

        gpla::cli::RunConfig cfg = config_path.empty() ? gpla::cli::load_config_text("", &std::cout)
                                                       : gpla::cli::load_config(config_path, &std::cout);
        if (chosen->cmd->count("--seed") > 0) cfg.seed = static_cast<std::uint64_t>(seed);

        gpla::cli::RunManifest m = gpla::cli::run_stage(cfg, chosen->stage, out_dir);
        std::cout << "stage " << m.stage << " finished in " << m.wall_clock_seconds << "s; " << m.artifacts.size()
                  << " artifacts; config " << m.config_hash << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
