#include <CLI11.hpp>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <string>

#include "sdebayes/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "path to the pipeline config")
        ->required();
    sub->add_option("--out", args.out_override, "override the configured output directory");
    sub->add_option("--seed", args.seed_override, "override the configured master seed")
        ->each([&args](const std::string&) { args.seed_given = true; });
}

sdebayes::PipelineConfig resolve(const CommonArgs& args) {
    sdebayes::PipelineConfig cfg = sdebayes::load_config(args.config_path);
    if (!args.out_override.empty()) cfg.output_dir = args.out_override;
    if (args.seed_given) cfg.seed = args.seed_override;
    return cfg;
}

int run(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const sdebayes::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const sdebayes::missing_artifact_error& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const sdebayes::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const sdebayes::numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian drift/diffusion inference for 1D diffusions"};
    app.require_subcommand(1);

    struct Stage {
        const char* name;
        const char* help;
        void (*fn)(const sdebayes::PipelineConfig&);
    };
    const Stage stages[] = {
        {"simulate", "generate trajectory or exit-time data", &sdebayes::cmd_simulate},
        {"prepare", "turn raw simulation output into observations", &sdebayes::cmd_prepare},
        {"solve", "run the forward PDE solver at the configured model", &sdebayes::cmd_solve},
        {"infer", "MAP estimate with Laplace posterior", &sdebayes::cmd_infer},
        {"sample", "run the preconditioned MALA chain", &sdebayes::cmd_sample},
        {"predict", "posterior predictive observable curves", &sdebayes::cmd_predict},
    };

    CommonArgs args[std::size(stages)];
    const Stage* chosen = nullptr;
    const CommonArgs* chosen_args = nullptr;
    for (std::size_t i = 0; i < std::size(stages); ++i) {
        CLI::App* sub = app.add_subcommand(stages[i].name, stages[i].help);
        add_common(sub, args[i]);
        sub->callback([&, i] {
            chosen = &stages[i];
            chosen_args = &args[i];
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    return run([&] {
        const sdebayes::PipelineConfig cfg = resolve(*chosen_args);
        chosen->fn(cfg);
        std::cout << chosen->name << ": done (out: " << cfg.output_dir << ")\n";
    });
}
