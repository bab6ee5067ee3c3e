// ttv: synthetic table-tennis perception toolkit command line.
//
// Subcommands: simulate, events, calibrate, spin, snn train|eval|compare,
// report. Every run writes a manifest next to its outputs; rerunning with the
// same config and seed reproduces the outputs byte for byte.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"

#include "ttv/config.hpp"
#include "ttv/dataset.hpp"
#include "ttv/event_sim.hpp"
#include "ttv/ewand.hpp"
#include "ttv/geometry.hpp"
#include "ttv/physics.hpp"
#include "ttv/snn.hpp"
#include "ttv/spindoe.hpp"

namespace fs = std::filesystem;
using namespace ttv;

namespace {

bool g_quiet = false;

void note(const std::string& msg) {
    if (!g_quiet) std::cout << msg << "\n";
}

void write_manifest(const std::string& subcommand, const std::string& config_path,
                    const Config& cfg, uint64_t seed, const std::string& out_dir) {
    RunManifest m;
    m.subcommand = subcommand;
    m.config_path = config_path;
    m.config_echo = cfg.text();
    m.seed = seed;
    m.out_dir = out_dir;
    m.version = kToolkitVersion;
    m.write((fs::path(out_dir) / "manifest.json").string());
}

void save_pgm(const BallImage& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (float v : img.pixels) {
        unsigned char b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        f.write(reinterpret_cast<const char*>(&b), 1);
    }
}

Rig rig_from_option(const std::string& rig_path) {
    if (rig_path.empty()) return reference_rig();
    return load_rig(rig_path);
}

// ------------------------------------------------------------------ simulate

int cmd_simulate(const std::string& config_path, const std::string& out_dir, uint64_t seed) {
    Config cfg = config_path.empty() ? Config::parse("") : Config::parse_file(config_path);
    fs::create_directories(out_dir);

    Rig rig = reference_rig();
    save_rig(rig, (fs::path(out_dir) / "rig.json").string());

    // Ball trajectories.
    long n_traj = cfg.get_int("trajectories.count", 1);
    double duration = cfg.get_double("trajectories.duration", 0.9);
    double dt = cfg.get_double("trajectories.dt", 1e-3);
    PhysicsParams phys;
    phys.spin_damping = cfg.get_double("trajectories.spin_damping", phys.spin_damping);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> px0(-1.5, -0.9), py0(-0.6, 0.6), pz0(0.25, 0.6);
    std::uniform_real_distribution<double> vx(3.0, 6.5), vy(-2.0, 2.0), vz(0.8, 3.0);
    std::uniform_real_distribution<double> rate(20.0, 120.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<Trajectory> trajectories;
    for (long i = 0; i < n_traj; ++i) {
        BallState s0;
        s0.position = {px0(rng), py0(rng), pz0(rng)};
        s0.velocity = {vx(rng), vy(rng), vz(rng)};
        Vec3 axis{gauss(rng), gauss(rng), gauss(rng)};
        s0.omega = axis.normalized() * (rate(rng) * 2.0 * M_PI);
        Trajectory traj = simulate(s0, phys, duration, dt);
        char name[64];
        std::snprintf(name, sizeof(name), "traj_%03ld.csv", i);
        save_trajectory_csv(traj, (fs::path(out_dir) / name).string());
        trajectories.push_back(std::move(traj));
    }
    note("wrote " + std::to_string(n_traj) + " trajectories");

    // Event streams of each trajectory through the event cameras.
    if (cfg.get_bool("events.enabled", true)) {
        SnnDatasetParams ev;
        ev.contrast = cfg.get_double("events.contrast", ev.contrast);
        for (size_t i = 0; i < trajectories.size(); ++i) {
            const auto& traj = trajectories[i];
            for (size_t c = 0; c < rig.cameras.size(); ++c) {
                if (rig.cameras[c].kind != CameraKind::event) continue;
                auto stream = render_ball_events(traj, rig.cameras[c], traj.states.front().t,
                                                 traj.states.back().t, ev);
                char name[64];
                std::snprintf(name, sizeof(name), "traj_%03zu_%s.evs", i,
                              rig.cameras[c].name.c_str());
                save_events(stream, (fs::path(out_dir) / name).string());
            }
        }
        note("wrote event streams");
    }

    // Spinning-ball image sequences for the overhead high-speed camera view.
    if (cfg.get_bool("ball_images.enabled", false)) {
        long sequences = cfg.get_int("ball_images.count", 1);
        long frames = cfg.get_int("ball_images.frames", 16);
        double fps = cfg.get_double("ball_images.fps", 350.0);
        long res = cfg.get_int("ball_images.resolution", 60);
        double rate_min = cfg.get_double("ball_images.rate_min", 20.0);
        double rate_max = cfg.get_double("ball_images.rate_max", 120.0);
        auto pattern = default_pattern();
        save_pattern(pattern, (fs::path(out_dir) / "pattern.json").string());
        std::ofstream index((fs::path(out_dir) / "ball_images.csv"));
        index << "sequence,frame,file,t,rate_rps,axis_x,axis_y,axis_z\n";
        std::uniform_real_distribution<double> ur(rate_min, rate_max);
        for (long s = 0; s < sequences; ++s) {
            Vec3 axis = Vec3{gauss(rng), gauss(rng), gauss(rng)}.normalized();
            double r = ur(rng);
            auto images = render_spin_sequence(pattern, axis, r, phys.spin_damping, fps,
                                               static_cast<int>(frames), static_cast<int>(res),
                                               rng());
            for (size_t f = 0; f < images.size(); ++f) {
                char name[64];
                std::snprintf(name, sizeof(name), "ball_%03ld_%04zu.pgm", s, f);
                save_pgm(images[f], (fs::path(out_dir) / name).string());
                char line[256];
                std::snprintf(line, sizeof(line), "%ld,%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", s, f,
                              name, images[f].t, r, axis.x, axis.y, axis.z);
                index << line;
            }
        }
        note("wrote ball image sequences");
    }

    // Wand calibration capture.
    if (cfg.get_bool("wand.enabled", false)) {
        long poses = cfg.get_int("wand.poses", 50);
        double sigma = cfg.get_double("wand.sigma_px", 0.0);
        WandGeometry wand;
        BlinkModel model;
        auto wand_poses = random_wand_poses(static_cast<int>(poses), rng());
        auto cap = simulate_wand_capture(rig, wand, wand_poses, sigma, model, rng());
        auto detections = detect_markers(cap);
        save_wand(wand, (fs::path(out_dir) / "wand.json").string());
        save_detections_csv(detections, (fs::path(out_dir) / "detections.csv").string());
        for (size_t c = 0; c < cap.event_streams.size(); ++c) {
            if (rig.cameras[c].kind != CameraKind::event) continue;
            save_events(cap.event_streams[c],
                        (fs::path(out_dir) / ("wand_" + rig.cameras[c].name + ".evs")).string());
        }
        note("wrote wand capture with " + std::to_string(detections.size()) + " detections");
    }

    // Labelled event windows for the detector.
    if (cfg.get_bool("snn_dataset.enabled", false)) {
        SnnDatasetParams p;
        p.n_windows = static_cast<int>(cfg.get_int("snn_dataset.windows", 2000));
        p.window_us = static_cast<uint32_t>(cfg.get_int("snn_dataset.window_us", 48000));
        p.noise_rate_per_px_s = cfg.get_double("snn_dataset.noise_rate", p.noise_rate_per_px_s);
        p.seed = seed ^ 0x5eedf00ddULL;
        auto windows = make_snn_event_windows(rig, p);
        save_event_windows(windows, (fs::path(out_dir) / "dataset").string());
        note("wrote snn dataset with " + std::to_string(windows.size()) + " windows");
    }

    write_manifest("simulate", config_path, cfg, seed, out_dir);
    return 0;
}

// -------------------------------------------------------------------- events

int cmd_events(const std::string& rig_path, const std::string& traj_path,
               const std::string& out_dir, double contrast, double refractory_us,
               bool export_csv, const std::string& config_path, uint64_t seed) {
    Rig rig = rig_from_option(rig_path);
    Trajectory traj = load_trajectory_csv(traj_path);
    fs::create_directories(out_dir);
    SnnDatasetParams params;
    params.contrast = contrast;
    params.refractory_us = refractory_us;
    for (size_t c = 0; c < rig.cameras.size(); ++c) {
        if (rig.cameras[c].kind != CameraKind::event) continue;
        auto stream = render_ball_events(traj, rig.cameras[c], traj.states.front().t,
                                         traj.states.back().t, params);
        auto base = fs::path(out_dir) / rig.cameras[c].name;
        save_events(stream, base.string() + ".evs");
        if (export_csv) save_events_csv(stream, base.string() + ".csv");
        note(rig.cameras[c].name + ": " + std::to_string(stream.events.size()) + " events");
    }
    Config cfg = Config::parse("");
    write_manifest("events", config_path, cfg, seed, out_dir);
    return 0;
}

// ------------------------------------------------------------------ calibrate

int cmd_calibrate(const std::string& detections_path, const std::string& wand_path,
                  const std::string& rig_path, int gauge, const std::string& out_dir,
                  uint64_t seed) {
    Rig rig = rig_from_option(rig_path);
    rig.gauge = gauge;
    WandGeometry wand = wand_path.empty() ? WandGeometry{} : load_wand(wand_path);
    auto detections = load_detections_csv(detections_path);
    fs::create_directories(out_dir);

    auto problem = build_problem(rig, wand, detections);
    Rig init = initialize_extrinsics(problem);
    auto result = bundle_adjust(problem, init);

    save_rig(result.rig, (fs::path(out_dir) / "rig_calibrated.json").string());
    save_mae_csv(result.rig, result.reprojection,
                 (fs::path(out_dir) / "mae_report.csv").string());
    {
        std::ofstream f(fs::path(out_dir) / "wand_poses.csv");
        f << "t,px,py,pz,dx,dy,dz\n";
        char line[256];
        for (const auto& wp : result.wand_poses) {
            std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", wp.t,
                          wp.point.x, wp.point.y, wp.point.z, wp.direction.x, wp.direction.y,
                          wp.direction.z);
            f << line;
        }
    }
    nlohmann::json j;
    j["converged"] = result.converged;
    j["iterations"] = result.iterations;
    j["final_cost"] = result.final_cost;
    j["samples"] = result.sample_indices.size();
    std::ofstream(fs::path(out_dir) / "summary.json") << j.dump(2) << "\n";

    for (size_t c = 0; c < result.reprojection.size(); ++c) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-10s %.3f +- %.3f px", rig.cameras[c].name.c_str(),
                      result.reprojection[c].mean, result.reprojection[c].stddev);
        note(line);
    }
    Config cfg = Config::parse("");
    write_manifest("calibrate", "", cfg, seed, out_dir);
    return 0;
}

// ---------------------------------------------------------------------- spin

int cmd_spin(const std::string& config_path, const std::string& track_path,
             const std::string& pattern_out, const std::string& out_dir, uint64_t seed) {
    if (!pattern_out.empty()) {
        save_pattern(default_pattern(), pattern_out);
        note("wrote " + pattern_out);
        return 0;
    }
    fs::create_directories(out_dir);

    if (!track_path.empty()) {
        auto track = load_track_csv(track_path);
        auto est = unwrap_spin(track);
        std::ofstream(fs::path(out_dir) / "spin_estimate.json") << spin_estimate_to_json(est);
        note("rate0 " + std::to_string(est.rate0) + " rps, reliable " +
             (est.reliable ? std::string("yes") : std::string("no")));
        Config cfg = Config::parse("");
        write_manifest("spin", "", cfg, seed, out_dir);
        return 0;
    }

    Config cfg = config_path.empty() ? Config::parse("") : Config::parse_file(config_path);
    auto rates = cfg.get_doubles("benchmark.rates");
    if (rates.empty()) {
        double lo = cfg.get_double("benchmark.rate_min", 5.0);
        double hi = cfg.get_double("benchmark.rate_max", 170.0);
        double step = cfg.get_double("benchmark.rate_step", 15.0);
        if (!(lo > 0.0) || hi < lo) throw ConfigError("benchmark rate sweep is empty");
        for (double r = lo; r <= hi + 1e-9; r += step) rates.push_back(r);
    }
    for (double r : rates)
        if (!(r > 0.0) || r > 250.0)
            throw ConfigError("benchmark rates must lie in (0, 250] rps");
    long axes = cfg.get_int("benchmark.axes", 20);
    double fps = cfg.get_double("benchmark.fps", 350.0);
    long frames = cfg.get_int("benchmark.frames", 48);
    long resolution = cfg.get_int("benchmark.resolution", 60);
    double damping = cfg.get_double("benchmark.spin_damping", 0.091);
    double noise_deg = cfg.get_double("benchmark.orientation_noise_deg", 0.0);

    auto pattern = default_pattern();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::ofstream out(fs::path(out_dir) / "spin_benchmark.csv");
    out << "rate_rps,axis_x,axis_y,axis_z,est_rate_rps,est_k,rate_err_rel,axis_err_deg,"
           "reliable,residual_deg\n";
    int envelope_ok = 0, envelope_total = 0;
    for (double r : rates) {
        for (long a = 0; a < axes; ++a) {
            Vec3 axis = Vec3{gauss(rng), gauss(rng), gauss(rng)}.normalized();
            auto row = run_spin_case(pattern, axis, r, damping, fps, static_cast<int>(frames),
                                     static_cast<int>(resolution), rng(), noise_deg);
            char line[512];
            std::snprintf(line, sizeof(line),
                          "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%.9g\n", r, axis.x, axis.y,
                          axis.z, row.estimate.rate0, row.estimate.damping_k, row.rate_error_rel,
                          row.axis_error_deg, row.estimate.reliable ? 1 : 0,
                          row.estimate.residual_deg);
            out << line;
            if (r <= fps / 2.0 - 5.0) {
                ++envelope_total;
                if (!row.failed && row.rate_error_rel <= 0.02 && row.axis_error_deg <= 5.0)
                    ++envelope_ok;
            }
        }
    }
    nlohmann::json j;
    j["runs_within_envelope"] = envelope_total;
    j["runs_meeting_tolerance"] = envelope_ok;
    j["envelope_rate_rps"] = fps / 2.0;
    std::ofstream(fs::path(out_dir) / "summary.json") << j.dump(2) << "\n";
    note("benchmark: " + std::to_string(envelope_ok) + "/" + std::to_string(envelope_total) +
         " runs within tolerance");
    write_manifest("spin", config_path, cfg, seed, out_dir);
    return 0;
}

// ----------------------------------------------------------------------- snn

snn::NetworkConfig network_config_from(const Config& cfg, uint64_t seed) {
    snn::NetworkConfig c;
    c.time_steps = static_cast<int>(cfg.get_int("snn.time_steps", 8));
    c.conv1.out_channels = static_cast<int>(cfg.get_int("snn.conv1_channels", 8));
    c.conv2.out_channels = static_cast<int>(cfg.get_int("snn.conv2_channels", 16));
    c.hidden = static_cast<int>(cfg.get_int("snn.hidden", 512));
    c.threshold = static_cast<float>(cfg.get_double("snn.threshold", 1.0));
    c.surrogate_beta = static_cast<float>(cfg.get_double("snn.surrogate_beta", 0.5));
    c.seed = seed;
    return c;
}

snn::TrainOptions train_options_from(const Config& cfg, uint64_t seed) {
    snn::TrainOptions o;
    o.epochs = static_cast<int>(cfg.get_int("snn.epochs", 12));
    o.learning_rate = cfg.get_double("snn.learning_rate", 1e-3);
    o.batch_size = static_cast<int>(cfg.get_int("snn.batch", 32));
    o.threads = static_cast<int>(cfg.get_int("snn.threads", 0));
    o.shuffle_seed = seed ^ 0x7777;
    return o;
}

// Deterministic train/held-out split.
std::pair<snn::Dataset, snn::Dataset> split_dataset(snn::Dataset&& all, double train_fraction,
                                                    uint64_t seed) {
    std::vector<int> order(all.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ 0xABCD);
    std::shuffle(order.begin(), order.end(), rng);
    size_t n_train = static_cast<size_t>(all.samples.size() * train_fraction);
    snn::Dataset train_set, eval_set;
    for (size_t i = 0; i < order.size(); ++i)
        (i < n_train ? train_set : eval_set).samples.push_back(std::move(all.samples[order[i]]));
    return {std::move(train_set), std::move(eval_set)};
}

nlohmann::json eval_to_json(const snn::EvalResult& ev, int time_steps) {
    nlohmann::json j;
    j["time_steps"] = time_steps;
    j["mean_px_error"] = ev.mean_px_error;
    j["std_px_error"] = ev.std_px_error;
    j["mean_synops"] = ev.mean_synops;
    j["mean_spikes"] = ev.mean_spikes;
    j["samples"] = ev.count;
    return j;
}

int cmd_snn(const std::string& mode, const std::string& config_path,
            const std::string& data_dir, const std::string& weights_path,
            const std::string& out_dir, uint64_t seed) {
    Config cfg = config_path.empty() ? Config::parse("") : Config::parse_file(config_path);
    fs::create_directories(out_dir);

    auto windows = load_event_windows(data_dir);
    if (windows.empty()) throw std::runtime_error("dataset is empty: " + data_dir);

    if (mode == "train") {
        auto c = network_config_from(cfg, seed);
        auto opts = train_options_from(cfg, seed);
        double frac = cfg.get_double("snn.train_fraction", 0.7);
        auto [train_set, eval_set] =
            split_dataset(compile_snn_dataset(windows, c.time_steps), frac, seed);
        snn::Network net(c);
        auto log = snn::train(net, train_set, opts);
        snn::save_weights(net, (fs::path(out_dir) / "weights.snnw").string());
        snn::save_train_log_csv(log, (fs::path(out_dir) / "train_log.csv").string());
        auto ev = snn::evaluate(net, eval_set.samples.empty() ? train_set : eval_set,
                                opts.threads);
        std::ofstream(fs::path(out_dir) / "eval.json")
            << eval_to_json(ev, c.time_steps).dump(2) << "\n";
        char line[256];
        std::snprintf(line, sizeof(line), "held-out px error %.3f +- %.3f, synops %.3g",
                      ev.mean_px_error, ev.std_px_error, ev.mean_synops);
        note(line);
    } else if (mode == "eval") {
        snn::Network net = snn::load_weights(weights_path);
        auto data = compile_snn_dataset(windows, net.config().time_steps);
        auto ev = snn::evaluate(net, data, static_cast<int>(cfg.get_int("snn.threads", 0)));
        std::ofstream(fs::path(out_dir) / "eval.json")
            << eval_to_json(ev, net.config().time_steps).dump(2) << "\n";
        std::ofstream row(fs::path(out_dir) / "table2_row.csv");
        row << "time_steps,px_error_mean,px_error_std,synops\n";
        char line[256];
        std::snprintf(line, sizeof(line), "%d,%.6g,%.6g,%.6g\n", net.config().time_steps,
                      ev.mean_px_error, ev.std_px_error, ev.mean_synops);
        row << line;
        note(std::string(line));
    } else if (mode == "compare") {
        auto c = network_config_from(cfg, seed);
        auto opts = train_options_from(cfg, seed);
        double frac = cfg.get_double("snn.train_fraction", 0.7);
        auto [train_set, eval_set] =
            split_dataset(compile_snn_dataset(windows, c.time_steps), frac, seed);
        auto rep = snn::compare_loss_activity(c, train_set,
                                              eval_set.samples.empty() ? train_set : eval_set,
                                              opts);
        nlohmann::json j;
        j["mse"] = eval_to_json(rep.mse_eval, c.time_steps);
        j["ce"] = eval_to_json(rep.ce_eval, c.time_steps);
        j["mse_final_loss"] = rep.mse_final_loss;
        j["ce_final_loss"] = rep.ce_final_loss;
        j["synops_ratio_ce_over_mse"] = rep.synops_ratio_ce_over_mse;
        j["reproduced"] = rep.reproduced;
        std::ofstream(fs::path(out_dir) / "compare.json") << j.dump(2) << "\n";
        char line[256];
        std::snprintf(line, sizeof(line), "CE/MSE synops ratio %.3f (%s)",
                      rep.synops_ratio_ce_over_mse,
                      rep.reproduced ? "activity claim reproduced" : "claim NOT reproduced");
        note(line);
    } else {
        throw std::runtime_error("unknown snn mode " + mode);
    }
    write_manifest("snn " + mode, config_path, cfg, seed, out_dir);
    return 0;
}

// -------------------------------------------------------------------- report

int cmd_report(const std::string& kind, const std::vector<std::string>& inputs,
               const std::string& out_path) {
    if (kind == "snn") {
        std::ofstream f(out_path);
        f << "time_steps,px_error_mean,px_error_std,synops\n";
        for (const auto& in : inputs) {
            std::ifstream jf(in);
            if (!jf) throw std::runtime_error("cannot read " + in);
            nlohmann::json j = nlohmann::json::parse(jf);
            char line[256];
            std::snprintf(line, sizeof(line), "%d,%.6g,%.6g,%.6g\n",
                          j.at("time_steps").get<int>(), j.at("mean_px_error").get<double>(),
                          j.at("std_px_error").get<double>(), j.at("mean_synops").get<double>());
            f << line;
        }
    } else if (kind == "calib") {
        std::ofstream f(out_path);
        f << "camera,mean,std\n";
        for (const auto& in : inputs) {
            std::ifstream mf(fs::path(in) / "mae_report.csv");
            if (!mf) throw std::runtime_error("cannot read mae_report.csv in " + in);
            std::string line;
            std::getline(mf, line);  // header
            while (std::getline(mf, line))
                if (!line.empty()) f << line << "\n";
        }
    } else {
        throw std::runtime_error("unknown report kind " + kind);
    }
    note("wrote " + out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"table-tennis perception toolkit"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::simple);

    uint64_t seed = 0;
    std::string out_dir = "out";
    std::string config_path;
    app.add_option("--seed", seed, "master RNG seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--config", config_path, "run configuration file");
    app.add_flag("--quiet", g_quiet, "suppress progress output");

    auto* sim = app.add_subcommand("simulate", "synthesize trajectories, images and events");

    auto* events = app.add_subcommand("events", "event streams from a trajectory");
    std::string rig_path, traj_path;
    double contrast = 0.25, refractory = 0.0;
    bool export_csv = false;
    events->add_option("--rig", rig_path, "rig JSON (default: built-in reference rig)");
    events->add_option("--trajectory", traj_path, "trajectory CSV")->required();
    events->add_option("--contrast", contrast, "contrast threshold");
    events->add_option("--refractory", refractory, "refractory period, us");
    events->add_flag("--export-csv", export_csv, "also write CSV event lists");

    auto* calib = app.add_subcommand("calibrate", "wand calibration via bundle adjustment");
    std::string det_path, wand_path, calib_rig_path;
    int gauge = 0;
    calib->add_option("--detections", det_path, "detections CSV")->required();
    calib->add_option("--wand", wand_path, "wand geometry JSON (default: built-in)");
    calib->add_option("--rig", calib_rig_path, "rig JSON with intrinsics");
    calib->add_option("--gauge", gauge, "gauge camera index");

    auto* spin = app.add_subcommand("spin", "spin estimation benchmark and tools");
    std::string track_path, pattern_out;
    spin->add_option("--track", track_path, "orientation track CSV to estimate");
    spin->add_option("--emit-pattern", pattern_out, "write the default dot pattern and exit");

    auto* snn_cmd = app.add_subcommand("snn", "spiking detector train/eval/compare");
    std::string snn_mode, data_dir, weights_path;
    snn_cmd->add_option("mode", snn_mode, "train|eval|compare")->required();
    snn_cmd->add_option("--data", data_dir, "dataset directory")->required();
    snn_cmd->add_option("--weights", weights_path, "weights file (eval)");

    auto* report = app.add_subcommand("report", "collate results into table-style CSV");
    std::string report_kind;
    std::vector<std::string> report_inputs;
    std::string report_out = "report.csv";
    report->add_option("--kind", report_kind, "snn|calib")->required();
    report->add_option("--inputs", report_inputs, "input files/directories")
        ->required()
        ->delimiter(',');
    report->add_option("--output", report_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(config_path, out_dir, seed);
        if (events->parsed())
            return cmd_events(rig_path, traj_path, out_dir, contrast, refractory, export_csv,
                              config_path, seed);
        if (calib->parsed())
            return cmd_calibrate(det_path, wand_path, calib_rig_path, gauge, out_dir, seed);
        if (spin->parsed()) return cmd_spin(config_path, track_path, pattern_out, out_dir, seed);
        if (snn_cmd->parsed())
            return cmd_snn(snn_mode, config_path, data_dir, weights_path, out_dir, seed);
        if (report->parsed()) return cmd_report(report_kind, report_inputs, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
