#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmgf/dataset.hpp"
#include "mmgf/error.hpp"
#include "mmgf/io.hpp"
#include "mmgf/train.hpp"

namespace mmgf::cli {

namespace fs = std::filesystem;

inline void require_out_dir(const std::string& out) {
    if (out.empty()) throw ParamError("--out is required");
}

inline int cmd_synth(const SynthConfig& sc, const std::string& out) {
    require_out_dir(out);
    MultimodalDataset data = synth_generate(sc);
    io::write_bundle(out, data, &sc);
    std::cout << "wrote dataset bundle to " << out << " (n=" << sc.n
              << ", image_size=" << sc.image_size << ", n_clinical=" << sc.n_clinical
              << ", separation=" << io::format_double(sc.separation)
              << ", label_noise=" << io::format_double(sc.label_noise) << ", seed=" << sc.seed
              << ")\n";
    return 0;
}

struct TrainArtifacts {
    CvResult cv;
    TrainConfig cfg;
};

// Shared by train and ablate: config resolution, the run itself.
inline TrainArtifacts run_training(const std::string& data_dir, const TrainConfig& cfg) {
    MultimodalDataset data = io::load_bundle(data_dir);
    TrainArtifacts art;
    art.cfg = cfg;
    art.cv = run_cv(data, cfg);
    return art;
}

inline void write_train_outputs(const fs::path& out, const TrainArtifacts& art) {
    fs::create_directories(out);
    io::write_text_atomic(out / "metrics.json", io::metrics_json_text(art.cv, art.cfg));
    for (std::size_t f = 0; f < art.cv.folds.size(); ++f) {
        const FoldResult& fr = art.cv.folds[f];
        io::write_text_atomic(out / ("loss_fold" + std::to_string(f) + ".csv"),
                              io::loss_history_csv(fr.report.loss_history));
        if (fr.report.auc_defined)
            io::write_text_atomic(out / ("roc_fold" + std::to_string(f) + ".csv"),
                                  io::roc_csv(fr.report.roc_points));
    }
    io::Checkpoint cp;
    cp.config = art.cfg;
    cp.encoder = art.cv.encoder;
    cp.pretrain_loss = art.cv.pretrain_history;
    for (const FoldResult& fr : art.cv.folds) cp.folds.push_back(fr.model);
    io::write_checkpoint(out / "checkpoint.json", cp);
}

inline int cmd_train(const std::string& data_dir, const TrainConfig& cfg,
                     const std::string& out) {
    require_out_dir(out);
    TrainArtifacts art = run_training(data_dir, cfg);
    write_train_outputs(out, art);
    std::cout << "pooled accuracy " << io::format_double(art.cv.pooled.accuracy);
    if (art.cv.pooled.auc_defined)
        std::cout << ", pooled auc " << io::format_double(art.cv.pooled.auc);
    std::cout << "\nfold auc mean " << io::format_double(art.cv.fold_auc_mean) << " std "
              << io::format_double(art.cv.fold_auc_std) << "\n";
    std::cout << "wrote metrics, loss curves, roc points, checkpoint to " << out << "\n";
    return 0;
}

inline std::string sanitize_cell(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline int cmd_ablate(const std::string& data_dir, const TrainConfig& base,
                      std::vector<std::string> gnns, std::vector<std::string> backbones,
                      std::vector<double> betas, std::vector<double> deltas,
                      const std::string& out) {
    require_out_dir(out);
    if (gnns.empty()) gnns.push_back(gnn_kind_name(base.gnn));
    if (backbones.empty()) backbones.push_back(encoder_kind_name(base.encoder.kind));
    if (betas.empty()) betas.push_back(base.beta);
    if (deltas.empty()) deltas.push_back(base.delta);

    MultimodalDataset data = io::load_bundle(data_dir);
    std::string csv =
        "gnn,backbone,beta,delta,status,accuracy,f1_normal,f1_abnormal,"
        "sensitivity_normal,sensitivity_abnormal,precision_normal,precision_abnormal,"
        "auc,fold_auc_mean,fold_auc_std\n";
    std::size_t rows = 0;
    for (const std::string& g : gnns)
        for (const std::string& b : backbones)
            for (double beta : betas)
                for (double delta : deltas) {
                    TrainConfig cfg = base;
                    if (g == "gat") cfg.gnn = GnnKind::gat;
                    else if (g == "gcn") cfg.gnn = GnnKind::gcn;
                    else
                        throw ParamError("ablate: unknown gnn '" + g + "'");
                    if (b == "identity") cfg.encoder.kind = EncoderKind::identity;
                    else if (b == "dense") cfg.encoder.kind = EncoderKind::dense;
                    else if (b == "conv") cfg.encoder.kind = EncoderKind::conv;
                    else
                        throw ParamError("ablate: unknown backbone '" + b + "'");
                    cfg.beta = beta;
                    cfg.delta = delta;
                    csv += g + "," + b + "," + io::format_double(beta) + "," +
                           io::format_double(delta) + ",";
                    try {
                        CvResult cv = run_cv(data, cfg);
                        const MetricsReport& r = cv.pooled;
                        csv += "ok," + io::format_double(r.accuracy) + "," +
                               io::format_double(r.per_class[0].f1) + "," +
                               io::format_double(r.per_class[1].f1) + "," +
                               io::format_double(r.per_class[0].sensitivity) + "," +
                               io::format_double(r.per_class[1].sensitivity) + "," +
                               io::format_double(r.per_class[0].precision) + "," +
                               io::format_double(r.per_class[1].precision) + "," +
                               (r.auc_defined ? io::format_double(r.auc) : "") + "," +
                               io::format_double(cv.fold_auc_mean) + "," +
                               io::format_double(cv.fold_auc_std) + "\n";
                    } catch (const Error& e) {
                        csv += "error: " + sanitize_cell(e.what()) + ",,,,,,,,,\n";
                    }
                    ++rows;
                }
    fs::create_directories(out);
    io::write_text_atomic(fs::path(out) / "ablation.csv", csv);
    std::cout << "wrote " << rows << " ablation rows to " << out << "/ablation.csv\n";
    return 0;
}

inline int cmd_embed_export(const std::string& checkpoint_path, const std::string& data_dir,
                            std::size_t fold, const std::string& out) {
    require_out_dir(out);
    io::Checkpoint cp = io::read_checkpoint(checkpoint_path);
    MultimodalDataset data = io::load_bundle(data_dir);
    if (fold >= cp.folds.size())
        throw ParamError("embed-export: fold " + std::to_string(fold) +
                         " out of range, checkpoint has " + std::to_string(cp.folds.size()));
    const ModelState& m = cp.folds[fold];
    if (m.train_mask.size() != data.size())
        throw DataError("embed-export: checkpoint was trained on " +
                        std::to_string(m.train_mask.size()) + " nodes, dataset has " +
                        std::to_string(data.size()));
    Tensor qm = image_features(data.images, cp.encoder);
    if (m.scaler_m.mean.size() != qm.dim(1))
        throw DataError("embed-export: image feature width " + std::to_string(qm.dim(1)) +
                        " does not match checkpoint width " +
                        std::to_string(m.scaler_m.mean.size()));
    if (m.scaler_f.mean.size() != data.clinical.dim(1))
        throw DataError("embed-export: clinical feature width " +
                        std::to_string(data.clinical.dim(1)) +
                        " does not match checkpoint width " +
                        std::to_string(m.scaler_f.mean.size()));

    FoldContext ctx;
    ctx.qm_std = apply_scaler(qm, m.scaler_m);
    ctx.xf_std = apply_scaler(data.clinical, m.scaler_f);
    ctx.g_m = add_self_loops(knn_graph(ctx.qm_std, cp.config.knn_k, cp.config.metric));
    ctx.g_f = add_self_loops(knn_graph(ctx.xf_std, cp.config.knn_k, cp.config.metric));
    ForwardOutputs fwd = model_forward(ctx, m.params, cp.config.normalize_similarity);

    fs::create_directories(out);
    io::write_text_atomic(fs::path(out) / "fused_embeddings.csv",
                          io::fused_embeddings_csv(data.ids, data.labels, fwd.z_fused));
    io::write_text_atomic(fs::path(out) / "similarity.csv", io::similarity_csv(fwd.similarity));
    std::cout << "wrote fused embeddings [" << fwd.z_fused.dim(0) << " x "
              << fwd.z_fused.dim(1) << "] and similarity matrix to " << out << "\n";
    return 0;
}

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"multimodal contrastive cross-view graph fusion classifier"};
    app.require_subcommand(1);

    std::string out_dir, config_path;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = app.add_option("--seed", seed, "random seed");
    app.add_option("--config", config_path, "run configuration file (key = value lines)");
    app.add_option("--out", out_dir, "output directory");

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset bundle");
    synth->fallthrough();
    SynthConfig sc;
    synth->add_option("--n", sc.n, "cohort size (even)");
    synth->add_option("--image-size", sc.image_size, "square image side");
    synth->add_option("--n-clinical", sc.n_clinical, "clinical feature count");
    synth->add_option("--separation", sc.separation, "class mean distance");
    synth->add_option("--noise", sc.label_noise, "label flip fraction");

    CLI::App* train = app.add_subcommand("train", "train with cross-validation");
    train->fallthrough();
    std::string train_data;
    train->add_option("--data", train_data, "dataset bundle directory")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "sweep a configuration grid");
    ablate->fallthrough();
    std::string ablate_data;
    std::vector<std::string> gnns, backbones;
    std::vector<double> betas, deltas;
    ablate->add_option("--data", ablate_data, "dataset bundle directory")->required();
    ablate->add_option("--gnn", gnns, "graph encoders to sweep")->delimiter(',');
    ablate->add_option("--backbone", backbones, "image backbones to sweep")->delimiter(',');
    ablate->add_option("--beta", betas, "beta values to sweep")->delimiter(',');
    ablate->add_option("--delta", deltas, "delta values to sweep")->delimiter(',');

    CLI::App* embed = app.add_subcommand("embed-export", "export fused embeddings");
    embed->fallthrough();
    std::string embed_checkpoint, embed_data;
    std::size_t embed_fold = 0;
    embed->add_option("--checkpoint", embed_checkpoint, "checkpoint file")->required();
    embed->add_option("--data", embed_data, "dataset bundle directory")->required();
    embed->add_option("--fold", embed_fold, "fold model to export");

    std::vector<const char*> argv;
    argv.push_back("mmgf");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());

        if (synth->parsed()) {
            if (seed_opt->count()) sc.seed = seed;
            return cmd_synth(sc, out_dir);
        }

        TrainConfig cfg;
        if (!config_path.empty()) cfg = io::parse_run_config(config_path);
        if (seed_opt->count()) cfg.seed = seed;

        if (train->parsed()) return cmd_train(train_data, cfg, out_dir);
        if (ablate->parsed())
            return cmd_ablate(ablate_data, cfg, gnns, backbones, betas, deltas, out_dir);
        return cmd_embed_export(embed_checkpoint, embed_data, embed_fold, out_dir);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mmgf::cli
