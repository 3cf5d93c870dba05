#pragma once

// Command-line entry points. Every subcommand takes --config (key=value file)
// and repeatable --set key=value overrides. Exit codes: 0 ok, 1 usage,
// 2 data error, 3 numeric abort.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "evicem/checkpoint.hpp"
#include "evicem/config.hpp"
#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/intervention.hpp"
#include "evicem/rectification.hpp"
#include "evicem/service.hpp"
#include "evicem/synth.hpp"
#include "evicem/tensor_archive.hpp"
#include "evicem/training.hpp"
#include "evicem/vlm.hpp"

namespace evicem {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

namespace cli {

namespace fs = std::filesystem;

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    io::atomic_write(path, j.dump(2) + "\n");
}

template <class Records>
inline void write_jsonl(const fs::path& path, const Records& records) {
    std::string out;
    for (const auto& r : records) out += r.to_json().dump() + "\n";
    io::atomic_write(path, out);
}

struct DataDir {
    Dataset train, val, test;
};

inline DataDir read_data_dir(const fs::path& dir) {
    return {read_dataset(dir / "train.jsonl"), read_dataset(dir / "val.jsonl"),
            read_dataset(dir / "test.jsonl")};
}

inline EmbeddingBank read_bank_with_tau(const fs::path& dir, double tau) {
    auto bank = read_bank(dir / "bank");
    bank.set_tau(tau);
    return bank;
}

inline nlohmann::json full_report(const ModelParams& params, const Dataset& ds, Mode mode) {
    const auto pred = predict(params, ds, mode);
    const auto m = metrics_from_predictions(pred, ds);
    const auto us = uncertainty_by_correctness(pred, ds);
    auto j = m.to_json();
    j["mode"] = to_string(mode);
    j["num_samples"] = ds.size();
    j["uncertainty_wrong"] = us.mean_wrong;
    j["uncertainty_correct"] = us.mean_correct;
    j["wrong_concept_predictions"] = us.wrong;
    j["wrong_prediction_confidence"] = wrong_prediction_confidence(pred, ds, mode);
    return j;
}

inline std::vector<std::size_t> parse_index_list(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& part : io::split_list(s)) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw UsageError("expected a comma-separated list of indices, got '" + s + "'");
        }
        out.push_back(std::stoul(part));
    }
    return out;
}

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    unsigned long long seed = 0;

    RunConfig load() const { return load_config(config, overrides); }
};

inline void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key=value configuration file")->required();
    cmd->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "random seed");
}

}  // namespace cli

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    using namespace cli;
    CLI::App app{"evicem: evidential concept embedding models"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // gen-data
    Common gen_c;
    std::string gen_out;
    SynthSpec spec;
    std::string planted;
    double split_train = 0.6, split_val = 0.2;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and embedding bank");
    add_common(gen, gen_c);
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--K", spec.K, "number of concepts");
    gen->add_option("--feature-dim", spec.feature_dim, "input feature dimension");
    gen->add_option("--classes", spec.num_classes, "number of diagnosis classes");
    gen->add_option("--samples", spec.num_samples, "total samples before splitting");
    gen->add_option("--planted", planted, "comma-separated misaligned concept indices");
    gen->add_option("--noise", spec.noise, "feature noise level");
    gen->add_option("--label-noise", spec.label_noise, "diagnosis label noise");

    // train
    Common tr_c;
    std::string tr_data, tr_out, tr_mode = "evidential";
    auto* tr = app.add_subcommand("train", "supervised training on ground-truth concept labels");
    add_common(tr, tr_c);
    tr->add_option("--data", tr_data, "directory written by gen-data")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--mode", tr_mode, "evidential | sigmoid_baseline");

    // pretrain-ecbl
    Common pre_c;
    std::string pre_data, pre_out;
    auto* pre = app.add_subcommand("pretrain-ecbl", "pretrain on embedding-bank soft labels");
    add_common(pre, pre_c);
    pre->add_option("--data", pre_data, "directory written by gen-data")->required();
    pre->add_option("--out", pre_out, "output directory")->required();

    // rectify
    Common rec_c;
    std::string rec_data, rec_out;
    bool rec_no_baseline = false;
    auto* rec = app.add_subcommand("rectify", "label-efficient training with CAV rectification");
    add_common(rec, rec_c);
    rec->add_option("--data", rec_data, "directory written by gen-data")->required();
    rec->add_option("--out", rec_out, "output directory")->required();
    rec->add_flag("--no-baseline", rec_no_baseline, "skip the unrectified comparison run");

    // eval
    Common ev_c;
    std::string ev_ckpt, ev_data, ev_out;
    auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset file");
    add_common(ev, ev_c);
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint stem (without extension)")->required();
    ev->add_option("--data", ev_data, "dataset .jsonl file")->required();
    ev->add_option("--out", ev_out, "metrics JSON output file")->required();

    // intervene-sim
    Common is_c;
    std::string is_ckpt, is_data, is_out, is_seeds = "0,1,2", is_cases;
    std::optional<std::size_t> is_max_t;
    auto* is = app.add_subcommand("intervene-sim", "intervention curves for both policies");
    add_common(is, is_c);
    is->add_option("--checkpoint", is_ckpt, "checkpoint stem")->required();
    is->add_option("--data", is_data, "dataset .jsonl file with ground-truth concepts")->required();
    is->add_option("--out", is_out, "curve records (.jsonl)")->required();
    is->add_option("--seeds", is_seeds, "comma-separated seeds for the random policy");
    is->add_option("--max-t", is_max_t, "maximum number of interventions (default K)");
    is->add_option("--cases-out", is_cases, "write ids corrected by one suggested intervention");

    // serve
    Common sv_c;
    std::string sv_ckpt, sv_data, sv_addr = "127.0.0.1:8080", sv_static;
    auto* sv = app.add_subcommand("serve", "HTTP API for interactive intervention");
    add_common(sv, sv_c);
    sv->add_option("--checkpoint", sv_ckpt, "checkpoint stem")->required();
    sv->add_option("--data", sv_data, "dataset .jsonl file whose samples become cases")->required();
    sv->add_option("--addr", sv_addr, "host:port to listen on");
    sv->add_option("--static", sv_static, "directory of console assets served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, e2;
        const int code = app.exit(e, o, e2);
        out << o.str();
        err << e2.str();
        if (code != 0) err << app.help();
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const auto cfg = gen_c.load();
            spec.seed = gen_c.seed;
            spec.tau = cfg.tau;
            for (auto k : parse_index_list(planted)) spec.planted_misaligned.insert(k);
            const auto data = generate_synthetic(spec);
            const auto split = split_dataset(data.dataset, gen_c.seed, split_train, split_val);
            const fs::path dir = gen_out;
            fs::create_directories(dir);
            write_dataset(dir / "train.jsonl", split.train);
            write_dataset(dir / "val.jsonl", split.val);
            write_dataset(dir / "test.jsonl", split.test);
            write_bank(dir / "bank", data.bank);
            std::vector<std::size_t> planted_v(spec.planted_misaligned.begin(),
                                               spec.planted_misaligned.end());
            write_json(dir / "synth.json", {{"K", spec.K},
                                            {"feature_dim", spec.feature_dim},
                                            {"num_classes", spec.num_classes},
                                            {"num_samples", spec.num_samples},
                                            {"planted_misaligned", planted_v},
                                            {"noise", spec.noise},
                                            {"label_noise", spec.label_noise},
                                            {"tau", spec.tau},
                                            {"seed", spec.seed},
                                            {"split", {split.train.size(), split.val.size(),
                                                       split.test.size()}}});
            out << "wrote " << split.train.size() << "/" << split.val.size() << "/"
                << split.test.size() << " samples to " << dir.string() << "\n";
        } else if (tr->parsed()) {
            const auto cfg = tr_c.load();
            const Mode mode = parse_mode(tr_mode);
            const auto d = read_data_dir(tr_data);
            const fs::path dir = tr_out;
            fs::create_directories(dir);
            const auto r = train(d.train, &d.val, cfg.train(tr_c.seed, mode));
            save_checkpoint(dir / "model", {r.params, mode, cfg.base_rate, d.train.concept_names});
            write_jsonl(dir / "train_log.jsonl", r.log);
            auto report = full_report(r.params, d.test, mode);
            report["selected_epoch"] = r.selected_epoch;
            write_json(dir / "metrics.json", report);
            out << "test mean concept AUC " << report["mean_concept_auc"].get<double>()
                << ", diagnosis ACC " << report["diag_acc"].get<double>() << "\n";
        } else if (pre->parsed()) {
            const auto cfg = pre_c.load();
            const auto d = read_data_dir(pre_data);
            const auto bank = read_bank_with_tau(pre_data, cfg.tau);
            const auto tc = cfg.train(pre_c.seed);
            const fs::path dir = pre_out;
            fs::create_directories(dir);
            const auto r = pretrain_ecbl(init_params(tc.dims_for(d.train), tc.seed), d.train, d.val,
                                         bank, tc);
            save_checkpoint(dir / "pretrained",
                            {r.params, Mode::evidential, cfg.base_rate, d.train.concept_names});
            write_jsonl(dir / "train_log.jsonl", r.log);
            const auto report = misalignment_from_uncertainty(r.val_mean_uncertainty, cfg.gamma);
            write_json(dir / "misalignment.json", report.to_json());
            out << "misaligned concepts: " << report.to_json()["misaligned"].dump() << "\n";
        } else if (rec->parsed()) {
            const auto cfg = rec_c.load();
            const auto d = read_data_dir(rec_data);
            const auto bank = read_bank_with_tau(rec_data, cfg.tau);
            const fs::path dir = rec_out;
            fs::create_directories(dir);
            const auto r = rectified_training_pipeline(d.train, d.val, d.test, bank, d.train,
                                                       cfg.train(rec_c.seed), cfg.rectify(),
                                                       !rec_no_baseline);
            const auto& names = d.train.concept_names;
            save_checkpoint(dir / "pretrained",
                            {r.pretrain.params, Mode::evidential, cfg.base_rate, names});
            save_checkpoint(dir / "model",
                            {r.rectified.params, Mode::evidential, cfg.base_rate, names});
            save_cavs(dir / "cavs", r.report, r.cavs);
            write_json(dir / "misalignment.json", r.report.to_json());
            nlohmann::json metrics = {
                {"rectified", full_report(r.rectified.params, d.test, Mode::evidential)}};
            if (r.unrectified) {
                save_checkpoint(dir / "unrectified",
                                {r.unrectified->params, Mode::evidential, cfg.base_rate, names});
                metrics["unrectified"] = full_report(r.unrectified->params, d.test, Mode::evidential);
            }
            write_json(dir / "metrics.json", metrics);
            out << "misaligned concepts: " << r.report.to_json()["misaligned"].dump()
                << "; rectified mean concept AUC " << r.metrics_rectified.mean_concept_auc;
            if (r.metrics_unrectified) {
                out << ", unrectified " << r.metrics_unrectified->mean_concept_auc;
            }
            out << "\n";
        } else if (ev->parsed()) {
            ev_c.load();
            const auto ck = load_checkpoint(ev_ckpt);
            const auto ds = read_dataset(ev_data);
            write_json(ev_out, full_report(ck.params, ds, ck.mode));
            out << "wrote " << ev_out << "\n";
        } else if (is->parsed()) {
            is_c.load();
            const auto ck = load_checkpoint(is_ckpt);
            const auto ds = read_dataset(is_data);
            const std::size_t max_t = is_max_t.value_or(ds.K);
            const auto seeds = parse_index_list(is_seeds);
            if (seeds.empty()) throw UsageError("--seeds must name at least one seed");
            std::vector<CurvePoint> points;
            std::map<std::pair<std::string, std::size_t>, std::vector<double>> by_t;
            for (auto seed : seeds) {
                for (Policy p : {Policy::uncertainty, Policy::random}) {
                    for (const auto& c : intervention_curve(ck.params, ds, p, max_t, seed, ck.mode)) {
                        points.push_back(c);
                        by_t[{to_string(p), c.t}].push_back(c.diag_auc);
                    }
                }
            }
            write_jsonl(is_out, points);
            for (const auto& [key, v] : by_t) {
                double mean = 0.0, var = 0.0;
                for (double a : v) mean += a;
                mean /= double(v.size());
                for (double a : v) var += (a - mean) * (a - mean);
                const double sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
                out << key.first << " t=" << key.second << " diag_auc " << mean << " +- " << sd
                    << "\n";
            }
            if (!is_cases.empty()) {
                const auto ids = cases_corrected_by_one_intervention(ck.params, ds);
                write_json(is_cases, {{"corrected_by_one_intervention", ids}});
            }
        } else if (sv->parsed()) {
            sv_c.load();
            auto ck = load_checkpoint(sv_ckpt);
            const auto ds = read_dataset(sv_data);
            const auto colon = sv_addr.rfind(':');
            if (colon == std::string::npos) throw UsageError("--addr must be host:port");
            const std::string host = sv_addr.substr(0, colon);
            int port = 0;
            try {
                port = std::stoi(sv_addr.substr(colon + 1));
            } catch (const std::logic_error&) {
                throw UsageError("--addr has an invalid port");
            }
            CaseStore store(std::move(ck), ds);
            Service service(store);
            httplib::Server server;
            std::optional<fs::path> static_dir;
            if (!sv_static.empty()) static_dir = fs::path(sv_static);
            register_routes(server, service, static_dir);
            out << "serving " << store.ids().size() << " cases on " << sv_addr << std::endl;
            if (!server.listen(host, port)) {
                err << "cannot listen on " << sv_addr << "\n";
                return kExitUsage;
            }
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericAbort& e) {
        err << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace evicem
