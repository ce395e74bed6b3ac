#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "calm/errors.hpp"
#include "calm/experiment.hpp"

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, io_error = 3, head_error = 4 };

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& sets) {
    std::map<std::string, std::string> out;
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw calm::ConfigError("--set expects key=value, got '" + s + "'");
        out[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return out;
}

int fail(const char* kind, const std::exception& e, int code) {
    std::fprintf(stderr, "calm: %s: %s\n", kind, e.what());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Head attribution and calm-down fine-tuning on a toy encoder-decoder"};
    app.require_subcommand(1);
    app.set_version_flag("--version", calm::kToolVersion);

    std::string config_path, out;
    std::vector<std::string> sets;
    std::map<std::string, std::string> args;
    std::string command;

    auto common = [&](CLI::App* sub, bool needs_out = true) {
        sub->add_option("-c,--config", config_path, "key=value experiment config file");
        sub->add_option("--set", sets, "override a config key (key=value, repeatable)");
        if (needs_out) sub->add_option("-o,--out", out, "output directory (default: config out_dir)");
        sub->callback([&, sub] { command = sub->get_name(); });
    };
    auto arg = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                   const std::string& help) {
        return sub->add_option_function<std::string>(
            flag, [&args, key](const std::string& v) { args[key] = v; }, help);
    };

    auto* gen = app.add_subcommand("gen-data", "generate every corpus and write CSV listings");
    common(gen);
    gen->add_flag_callback("--features", [&] { args["features"] = "true"; },
                           "also write binary feature sidecars");

    auto* train = app.add_subcommand("train-base", "train the base model from scratch");
    common(train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, optionally under a head mask");
    common(eval);
    arg(eval, "--checkpoint", "checkpoint", "input checkpoint")->required();
    arg(eval, "--mask", "mask", "comma-separated head indices to mask");
    arg(eval, "--label", "label", "row label in eval.csv");

    auto* ablate = app.add_subcommand("ablate", "single- or multi-head masking sweep");
    common(ablate);
    arg(ablate, "--checkpoint", "checkpoint", "input checkpoint")->required();
    arg(ablate, "--mode", "mode", "single|multi")->check(CLI::IsMember({"single", "multi"}));
    arg(ablate, "--ranking", "ranking", "head ranking for multi mode, best first");
    arg(ablate, "--combos", "combos", "explicit head sets for multi mode, e.g. 0,5;3,5");

    auto* tune = app.add_subcommand("calm-tune", "fine-tune on the noise-tune corpus");
    common(tune);
    arg(tune, "--checkpoint", "checkpoint", "input checkpoint")->required();
    arg(tune, "--heads", "heads", "head set to train (head-set mode)");
    arg(tune, "--epochs", "epochs", "number of epochs");
    arg(tune, "--trainable", "trainable", "head-set|decoder-only|all");
    arg(tune, "--label", "label", "row label in eval.csv");

    auto* sweep = app.add_subcommand("sweep-epochs", "calm-tune curve over epochs");
    common(sweep);
    arg(sweep, "--checkpoint", "checkpoint", "input checkpoint")->required();
    arg(sweep, "--heads", "heads", "head set to train")->required();
    arg(sweep, "--max-epochs", "max_epochs", "last epoch of the curve");
    sweep->add_flag_callback("--no-svg", [&] { args["svg"] = "false"; }, "skip curve.svg");

    auto* report = app.add_subcommand("report", "summarise a directory of command outputs");
    report->add_option_function<std::string>(
        "dir", [&](const std::string& v) { args["dir"] = v; }, "directory to summarise")
        ->required();
    report->callback([&] { command = "report"; });

    auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
    common(pipeline);
    pipeline->add_flag_callback("-v,--verbose", [&] { args["verbose"] = "true"; },
                                "log stage timings to stderr");

    std::string provenance;
    auto* replay = app.add_subcommand("replay", "re-run a command from its provenance file");
    replay->add_option("provenance", provenance, "provenance.txt to replay")->required();
    replay->add_option("-o,--out", out, "output directory")->required();
    replay->callback([&] { command = "replay"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (command == "replay") {
            calm::replay(provenance, out);
            return ok;
        }
        if (command == "report") {
            std::cout << calm::cmd_report(args.at("dir"));
            return ok;
        }
        const calm::ExperimentConfig cfg =
            calm::ExperimentConfig::load(config_path, parse_overrides(sets));
        if (args.count("checkpoint"))
            args["checkpoint"] = std::filesystem::absolute(args["checkpoint"]).string();
        if (out.empty()) out = cfg.resolve(cfg.out_dir);
        calm::run_command(command, args, cfg, out);
        return ok;
    } catch (const calm::HeadIndexError& e) {
        return fail("head index error", e, head_error);
    } catch (const calm::ConfigError& e) {
        return fail("config error", e, config_error);
    } catch (const calm::IoError& e) {
        return fail("io error", e, io_error);
    } catch (const std::exception& e) {
        return fail("error", e, failure);
    }
}
