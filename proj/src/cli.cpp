#include "ipcd/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ipcd/apps.hpp"
#include "ipcd/baselines.hpp"
#include "ipcd/eval.hpp"
#include "ipcd/model.hpp"
#include "ipcd/pcio.hpp"
#include "ipcd/projection.hpp"
#include "ipcd/scenegen.hpp"

namespace ipcd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::string out_dir;
    long seed = -1;  // -1: keep config/default seed
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
    cmd->add_option("--config", c.config_path, "configuration document");
    auto* out = cmd->add_option("--out", c.out_dir, "output directory");
    if (out_required) out->required();
    cmd->add_option("--seed", c.seed, "override the configured seed");
    cmd->add_flag("--quiet", c.quiet, "suppress console output");
}

ConfigDoc load_config(const Common& c) {
    if (c.config_path.empty()) return ConfigDoc{};
    return ConfigDoc::parse_file(c.config_path);
}

void info(const Common& c, const std::string& msg) {
    if (!c.quiet) std::cout << msg << "\n";
}

void write_summary(const Common& c, const std::string& command,
                   const std::vector<std::string>& outputs, json extra = {}) {
    json j;
    j["command"] = command;
    j["ok"] = true;
    j["outputs"] = outputs;
    if (!extra.is_null()) j["details"] = extra;
    fs::create_directories(c.out_dir);
    std::ofstream out(c.out_dir + "/run_summary.json", std::ios::binary);
    out << j.dump(2) << "\n";
}

HemisphereGrid grid_from_config(const ConfigDoc& doc) {
    return HemisphereGrid::with_step(doc.get_double("pld", "theta_step", 10.0),
                                     doc.get_double("pld", "phi_step", 10.0),
                                     doc.get_double("pld", "theta_max", 80.0));
}

PLDMap pld_for_entry(const DatasetEntry& entry, const ConfigDoc& doc) {
    const std::string cache = entry.dir + "/pld.csv";
    if (fs::exists(cache)) return load_pld_csv(cache);
    PointCloud cloud = load_ply(entry.dir + "/input.ply");
    auto [normalized, tf] = normalize_cloud(cloud);
    PLDMap map = compute_pld(normalized, grid_from_config(doc),
                             int(doc.get_int("pld", "image_size", 64)),
                             doc.get_double("pld", "point_size", 0.02));
    save_pld_csv(map, cache);
    return map;
}

// --- gen ---------------------------------------------------------------------

int cmd_gen(const Common& c) {
    ConfigDoc doc = load_config(c);
    GenConfig cfg = GenConfig::from_config(doc);
    if (c.seed >= 0) cfg.seed = uint64_t(c.seed);
    DatasetIndex idx = generate_dataset(cfg, c.out_dir);
    info(c, "generated " + std::to_string(idx.entries.size()) + " triplets under " + c.out_dir);
    write_summary(c, "gen", {c.out_dir + "/dataset_meta"},
                  json{{"assets", cfg.n_assets},
                       {"entries", idx.entries.size()},
                       {"points", cfg.n_points},
                       {"seed", cfg.seed}});
    return 0;
}

// --- pld ---------------------------------------------------------------------

int cmd_pld(const Common& c, const std::string& input, bool png) {
    ConfigDoc doc = load_config(c);
    PointCloud cloud = load_ply(input);
    auto [normalized, tf] = normalize_cloud(cloud);
    PLDMap map = compute_pld(normalized, grid_from_config(doc),
                             int(doc.get_int("pld", "image_size", 64)),
                             doc.get_double("pld", "point_size", 0.02));
    fs::create_directories(c.out_dir);
    const std::string csv = c.out_dir + "/pld.csv";
    save_pld_csv(map, csv);
    std::vector<std::string> outputs{csv};
    if (png) {
        const std::string heat = c.out_dir + "/pld_luma.png";
        save_pld_heatmap_png(map, heat);
        outputs.push_back(heat);
    }
    info(c, "pld map (" + std::to_string(map.grid.directions()) + " directions) -> " + csv);
    write_summary(c, "pld", outputs, json{{"directions", map.grid.directions()}});
    return 0;
}

// --- train ---------------------------------------------------------------------

int cmd_train(const Common& c, const std::string& dataset, const std::string& split) {
    ConfigDoc doc = load_config(c);
    TrainConfig cfg = TrainConfig::from_config(doc);
    if (c.seed >= 0) cfg.seed = uint64_t(c.seed);

    DatasetIndex idx = load_dataset_index(dataset);
    std::vector<DatasetEntry> entries = idx.split(split);
    if (entries.empty()) throw DataError("train: dataset split '" + split + "' is empty");

    const bool needs_pld = cfg.variant == Variant::Full && cfg.use_pld && cfg.use_refinement;
    std::vector<TrainSample> samples;
    samples.reserve(entries.size());
    for (const DatasetEntry& e : entries) {
        IntrinsicTriplet t = load_triplet_dir(e.dir);
        if (needs_pld) {
            PLDMap map = pld_for_entry(e, doc);
            samples.push_back(make_train_sample(t, &map));
        } else {
            samples.push_back(make_train_sample_no_pld(t));
        }
        info(c, "loaded " + e.dir + " (" + std::to_string(t.size()) + " pts)");
    }

    TrainResult result = train(samples, cfg);
    fs::create_directories(c.out_dir);
    const std::string params_path = c.out_dir + "/params.bin";
    const std::string history_path = c.out_dir + "/history.csv";
    save_params(result.params, params_path);
    save_history_csv(result.history, history_path);
    info(c, "trained " + std::to_string(cfg.iterations) + " iterations; final loss " +
                std::to_string(result.history.back().terms.total));
    write_summary(c, "train", {params_path, history_path},
                  json{{"iterations", cfg.iterations},
                       {"samples", samples.size()},
                       {"seed", cfg.seed},
                       {"variant", cfg.variant == Variant::Base ? "base" : "full"}});
    return 0;
}

// --- infer / retinex --------------------------------------------------------------

void write_prediction(const PointCloud& cloud, const Prediction& pred, const std::string& dir,
                      std::vector<std::string>& outputs) {
    fs::create_directories(dir);
    PointCloud alb{cloud.positions, pred.albedo};
    PointCloud shd{cloud.positions, pred.shade};
    save_ply(alb, dir + "/albedo.ply", PlyEncoding::BinaryLittleEndian, {}, PlyColorType::Float);
    save_ply(shd, dir + "/shade.ply", PlyEncoding::BinaryLittleEndian, {}, PlyColorType::Float);
    outputs.push_back(dir + "/albedo.ply");
    outputs.push_back(dir + "/shade.ply");
}

int cmd_infer(const Common& c, const std::string& params_path, const std::string& input,
              const std::string& pld_csv) {
    ConfigDoc doc = load_config(c);
    ModelParams params = load_params(params_path);
    PointCloud cloud = load_ply(input);
    PLDMap map;
    const PLDMap* map_ptr = nullptr;
    if (!pld_csv.empty()) {
        map = load_pld_csv(pld_csv);
        map_ptr = &map;
    }
    Prediction pred = infer(cloud, map_ptr, params, int(doc.get_int("infer", "k", 16)));
    std::vector<std::string> outputs;
    write_prediction(cloud, pred, c.out_dir, outputs);
    info(c, "decomposed " + std::to_string(cloud.size()) + " points -> " + c.out_dir);
    write_summary(c, "infer", outputs, json{{"points", cloud.size()}});
    return 0;
}

int cmd_retinex(const Common& c, const std::string& input) {
    ConfigDoc doc = load_config(c);
    RetinexConfig cfg;
    cfg.k = int(doc.get_int("retinex", "k", cfg.k));
    cfg.tau = doc.get_double("retinex", "tau", cfg.tau);
    cfg.mu = doc.get_double("retinex", "mu", cfg.mu);
    PointCloud cloud = load_ply(input);
    Prediction pred = retinex_points(cloud, cfg);
    std::vector<std::string> outputs;
    write_prediction(cloud, pred, c.out_dir, outputs);
    info(c, "retinex decomposition -> " + c.out_dir);
    write_summary(c, "retinex", outputs, json{{"points", cloud.size()}, {"k", cfg.k}});
    return 0;
}

// --- eval ---------------------------------------------------------------------

int cmd_eval(const Common& c, const std::string& dataset, const std::string& method,
             const std::string& params_path, const std::string& split) {
    ConfigDoc doc = load_config(c);
    DatasetIndex idx = load_dataset_index(dataset);
    std::vector<DatasetEntry> entries = idx.split(split);
    if (entries.empty()) throw DataError("eval: dataset split '" + split + "' is empty");

    ModelParams params;
    if (method == "model") {
        if (params_path.empty()) throw UsageError("eval: --params is required for method=model");
        params = load_params(params_path);
    }

    MetricReport report;
    for (const DatasetEntry& e : entries) {
        IntrinsicTriplet t = load_triplet_dir(e.dir);
        Prediction pred;
        if (method == "baseline_a")
            pred = baseline_a(t.cloud);
        else if (method == "baseline_s")
            pred = baseline_s(t.cloud);
        else if (method == "retinex") {
            RetinexConfig rcfg;
            rcfg.k = int(doc.get_int("retinex", "k", rcfg.k));
            rcfg.tau = doc.get_double("retinex", "tau", rcfg.tau);
            rcfg.mu = doc.get_double("retinex", "mu", rcfg.mu);
            pred = retinex_points(t.cloud, rcfg);
        } else if (method == "model") {
            PLDMap map;
            const PLDMap* map_ptr = nullptr;
            if (params.variant == Variant::Full && params.use_pld) {
                map = pld_for_entry(e, doc);
                map_ptr = &map;
            }
            pred = infer(t.cloud, map_ptr, params, int(doc.get_int("infer", "k", 16)));
        } else if (method == "gt") {
            pred.albedo = t.albedo;
            pred.shade = t.shade;
        } else {
            throw UsageError("eval: unknown method '" + method + "'");
        }
        MetricReportRow row;
        row.asset = e.asset;
        row.time = e.time;
        row.albedo = metrics(pred.albedo, t.albedo);
        row.shade = metrics(pred.shade, t.shade);
        report.rows.push_back(row);
    }
    report.finalize();
    fs::create_directories(c.out_dir);
    const std::string csv = c.out_dir + "/report.csv";
    save_metric_report_csv(report, csv);
    if (!c.quiet) std::cout << format_metric_table(report);
    write_summary(c, "eval", {csv},
                  json{{"method", method},
                       {"split", split},
                       {"albedo_mse_mean", report.albedo_mean.mse},
                       {"shade_mse_mean", report.shade_mean.mse}});
    return 0;
}

// --- register ---------------------------------------------------------------------

int cmd_register(const Common& c, const std::string& dataset, const std::string& colors,
                 const std::string& params_path, const std::string& split) {
    ConfigDoc doc = load_config(c);
    DatasetIndex idx = load_dataset_index(dataset);
    std::vector<DatasetEntry> entries = idx.split(split);
    if (entries.empty()) throw DataError("register: dataset split '" + split + "' is empty");

    ModelParams params;
    if (colors == "model_albedo") {
        if (params_path.empty())
            throw UsageError("register: --params is required for colors=model_albedo");
        params = load_params(params_path);
    } else if (colors != "input" && colors != "gt_albedo") {
        throw UsageError("register: colors must be input|gt_albedo|model_albedo");
    }

    uint64_t seed = uint64_t(doc.get_int("register", "seed", 11));
    if (c.seed >= 0) seed = uint64_t(c.seed);
    std::vector<double> overlaps = doc.get_doubles("register", "overlaps", {0.9, 0.7, 0.5});

    // Group entries per asset and color the clouds per the requested source.
    std::map<std::string, std::vector<DatasetEntry>> by_asset;
    for (const DatasetEntry& e : entries) by_asset[e.asset].push_back(e);

    std::vector<RegistrationInputs> pairs;
    for (const auto& [asset, list] : by_asset) {
        std::vector<PointCloud> clouds;
        for (const DatasetEntry& e : list) {
            IntrinsicTriplet t = load_triplet_dir(e.dir);
            PointCloud cl;
            auto [normalized, tf] = normalize_cloud(t.cloud);
            cl.positions = normalized.positions;
            if (colors == "input")
                cl.colors = t.cloud.colors;
            else if (colors == "gt_albedo")
                cl.colors = t.albedo;
            else {
                PLDMap map;
                const PLDMap* map_ptr = nullptr;
                if (params.variant == Variant::Full && params.use_pld) {
                    map = pld_for_entry(e, doc);
                    map_ptr = &map;
                }
                cl.colors = infer(t.cloud, map_ptr, params).albedo;
            }
            clouds.push_back(std::move(cl));
        }
        for (size_t a = 0; a < list.size(); ++a)
            for (size_t b = a + 1; b < list.size(); ++b)
                pairs.push_back(RegistrationInputs{asset, list[a].time, list[b].time, clouds[a],
                                                   clouds[b]});
    }

    std::vector<std::string> warnings;
    std::vector<RegistrationCase> cases = make_registration_cases(pairs, overlaps, seed, &warnings);
    for (const std::string& w : warnings) info(c, "warning: " + w);

    IcpParams icp;
    icp.max_iterations = int(doc.get_int("register", "max_iterations", icp.max_iterations));
    icp.correspondence_radius =
        doc.get_double("register", "correspondence_radius", icp.correspondence_radius);
    icp.color_weight = doc.get_double("register", "color_weight", icp.color_weight);
    RecallThresholds thr;
    thr.rotation_deg = doc.get_double("register", "recall_rotation_deg", thr.rotation_deg);
    thr.translation = doc.get_double("register", "recall_translation", thr.translation);

    std::vector<RigidTransform> results;
    fs::create_directories(c.out_dir);
    const std::string cases_csv = c.out_dir + "/registration.csv";
    std::ofstream cs(cases_csv, std::ios::binary);
    cs << "asset,time_src,time_dst,overlap,rot_err_deg,trans_err,rmse,iterations,converged\n";
    char buf[320];
    for (const RegistrationCase& rc : cases) {
        IcpResult r;
        try {
            r = colored_icp(rc.source, rc.target, RigidTransform::identity(), icp);
        } catch (const NumericalError&) {
            r.transform = RigidTransform::identity();  // counts as a miss
        }
        results.push_back(r.transform);
        const double re = rotation_error_deg(r.transform.R, rc.ground_truth.R);
        const double te = norm(r.transform.t - rc.ground_truth.t);
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.3g,%.6g,%.6g,%.6g,%d,%d\n", rc.asset.c_str(),
                      rc.time_src.c_str(), rc.time_dst.c_str(), rc.overlap, re, te, r.rmse,
                      r.iterations, int(r.converged));
        cs << buf;
    }
    const double recall = registration_recall(cases, results, thr);
    std::snprintf(buf, sizeof(buf), "recall,,,,,,,,%.6g\n", recall);
    cs << buf;
    cs.close();
    info(c, "registration recall (" + colors + "): " + std::to_string(recall) + " over " +
                std::to_string(cases.size()) + " cases");
    write_summary(c, "register", {cases_csv},
                  json{{"colors", colors}, {"recall", recall}, {"cases", cases.size()},
                       {"seed", seed}});
    return 0;
}

// --- relight / edit ------------------------------------------------------------------

int cmd_relight(const Common& c, const std::string& albedo_path, const std::string& shade_path) {
    PointCloud alb = load_ply(albedo_path);
    PointCloud shd = load_ply(shade_path);
    if (alb.size() != shd.size())
        throw DataError("relight: albedo and shade clouds differ in size");
    PointCloud out;
    out.positions = alb.positions;
    out.colors = relight(alb.colors, shd.colors);
    fs::create_directories(c.out_dir);
    const std::string path = c.out_dir + "/relit.ply";
    save_ply(out, path, PlyEncoding::BinaryLittleEndian, {}, PlyColorType::Float);
    info(c, "relit " + std::to_string(out.size()) + " points -> " + path);
    write_summary(c, "relight", {path}, json{{"points", out.size()}});
    return 0;
}

int cmd_edit(const Common& c, const std::string& albedo_path, const std::vector<double>& box,
             const std::string& indices_path, const std::vector<double>& color,
             double hue_shift_deg) {
    PointCloud alb = load_ply(albedo_path);
    Selection sel;
    if (!box.empty()) {
        if (box.size() != 6) throw UsageError("edit: --box needs x0 y0 z0 x1 y1 z1");
        Aabb b;
        b.expand({box[0], box[1], box[2]});
        b.expand({box[3], box[4], box[5]});
        sel.box = b;
    }
    if (!indices_path.empty()) {
        std::ifstream in(indices_path);
        if (!in) throw DataError("edit: cannot open indices file '" + indices_path + "'");
        int idx;
        while (in >> idx) sel.indices.push_back(idx);
    }
    if (!sel.box && sel.indices.empty())
        throw UsageError("edit: provide --box or --indices");
    EditOp op;
    if (!color.empty()) {
        if (color.size() != 3) throw UsageError("edit: --color needs r g b");
        op.set_color = Vec3{color[0], color[1], color[2]};
    }
    op.hue_shift_deg = hue_shift_deg;
    if (!op.set_color && hue_shift_deg == 0.0)
        throw UsageError("edit: provide --color or --hue-shift");

    PointCloud out;
    out.positions = alb.positions;
    out.colors = edit_texture(alb.colors, alb, sel, op);
    fs::create_directories(c.out_dir);
    const std::string path = c.out_dir + "/edited_albedo.ply";
    save_ply(out, path, PlyEncoding::BinaryLittleEndian, {}, PlyColorType::Float);
    info(c, "edited albedo -> " + path);
    write_summary(c, "edit", {path}, json{{"points", out.size()}});
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"point-cloud albedo/shade decomposition toolkit"};
    app.require_subcommand(1);

    Common c_gen, c_pld, c_train, c_infer, c_retinex, c_eval, c_register, c_relight, c_edit;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen, c_gen);

    auto* pld = app.add_subcommand("pld", "compute the luminance distribution of a cloud");
    add_common(pld, c_pld);
    std::string pld_input;
    bool pld_png = false;
    pld->add_option("--input", pld_input, "input PLY")->required();
    pld->add_flag("--png", pld_png, "also write a luma heatmap PNG");

    auto* train_cmd = app.add_subcommand("train", "train a decomposition model");
    add_common(train_cmd, c_train);
    std::string train_dataset, train_split = "train";
    train_cmd->add_option("--dataset", train_dataset, "dataset root")->required();
    train_cmd->add_option("--split", train_split, "train|test|all");

    auto* infer_cmd = app.add_subcommand("infer", "decompose a cloud with trained params");
    add_common(infer_cmd, c_infer);
    std::string infer_params, infer_input, infer_pld;
    infer_cmd->add_option("--params", infer_params, "trained parameter file")->required();
    infer_cmd->add_option("--input", infer_input, "input PLY")->required();
    infer_cmd->add_option("--pld", infer_pld, "PLD CSV for full-variant params");

    auto* retinex_cmd = app.add_subcommand("retinex", "rule-based retinex decomposition");
    add_common(retinex_cmd, c_retinex);
    std::string retinex_input;
    retinex_cmd->add_option("--input", retinex_input, "input PLY")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a method against ground truth");
    add_common(eval_cmd, c_eval);
    std::string eval_dataset, eval_method = "baseline_a", eval_params, eval_split = "test";
    eval_cmd->add_option("--dataset", eval_dataset, "dataset root")->required();
    eval_cmd->add_option("--method", eval_method, "gt|baseline_a|baseline_s|retinex|model");
    eval_cmd->add_option("--params", eval_params, "params for method=model");
    eval_cmd->add_option("--split", eval_split, "train|test|all");

    auto* reg = app.add_subcommand("register", "registration recall across sun times");
    add_common(reg, c_register);
    std::string reg_dataset, reg_colors = "input", reg_params, reg_split = "test";
    reg->add_option("--dataset", reg_dataset, "dataset root")->required();
    reg->add_option("--colors", reg_colors, "input|gt_albedo|model_albedo");
    reg->add_option("--params", reg_params, "params for colors=model_albedo");
    reg->add_option("--split", reg_split, "train|test|all");

    auto* relight_cmd = app.add_subcommand("relight", "recombine albedo with a new shade");
    add_common(relight_cmd, c_relight);
    std::string rel_albedo, rel_shade;
    relight_cmd->add_option("--albedo", rel_albedo, "albedo PLY")->required();
    relight_cmd->add_option("--shade", rel_shade, "shade PLY")->required();

    auto* edit_cmd = app.add_subcommand("edit", "edit albedo in a selected region");
    add_common(edit_cmd, c_edit);
    std::string edit_albedo, edit_indices;
    std::vector<double> edit_box, edit_color;
    double edit_hue = 0.0;
    edit_cmd->add_option("--albedo", edit_albedo, "albedo PLY")->required();
    edit_cmd->add_option("--box", edit_box, "axis-aligned box x0 y0 z0 x1 y1 z1")->expected(6);
    edit_cmd->add_option("--indices", edit_indices, "file with point indices");
    edit_cmd->add_option("--color", edit_color, "replacement rgb")->expected(3);
    edit_cmd->add_option("--hue-shift", edit_hue, "hue rotation in degrees");

    std::vector<const char*> argv;
    argv.push_back("ipcd");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(c_gen);
        if (pld->parsed()) return cmd_pld(c_pld, pld_input, pld_png);
        if (train_cmd->parsed()) return cmd_train(c_train, train_dataset, train_split);
        if (infer_cmd->parsed()) return cmd_infer(c_infer, infer_params, infer_input, infer_pld);
        if (retinex_cmd->parsed()) return cmd_retinex(c_retinex, retinex_input);
        if (eval_cmd->parsed())
            return cmd_eval(c_eval, eval_dataset, eval_method, eval_params, eval_split);
        if (reg->parsed()) return cmd_register(c_register, reg_dataset, reg_colors, reg_params,
                                               reg_split);
        if (relight_cmd->parsed()) return cmd_relight(c_relight, rel_albedo, rel_shade);
        if (edit_cmd->parsed())
            return cmd_edit(c_edit, edit_albedo, edit_box, edit_indices, edit_color, edit_hue);
        std::cerr << app.help();
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace ipcd
