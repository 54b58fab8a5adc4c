// Command-line entry point: data generation, training, evaluation and the trial server.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

// Eigen goes first: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include "dualrl/pipeline.hpp"
#include "dualrl/session_service.hpp"
#include "dualrl/http_api.hpp"

#include <CLI11.hpp>
#include <httplib.h>

namespace fs = std::filesystem;
using namespace dualrl;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  std::string command;
  RunConfig cfg;
  fs::path out_dir;
  std::uint64_t seed = 0;

  Provenance provenance() const { return {command, cfg.hash_hex(), seed}; }

  fs::path out(const std::string& name) const { return out_dir / name; }

  std::ofstream open(const std::string& name) const {
    std::ofstream f(out(name));
    if (!f) throw std::runtime_error("cannot write " + out(name).string());
    return f;
  }

  std::ofstream open_stamped(const std::string& name) const {
    auto f = open(name);
    provenance().write_comment(f);
    return f;
  }

  void save(Checkpoint ck, const std::string& name) const {
    provenance().stamp(ck);
    ck.save_file(out(name).string());
    std::cout << "wrote " << out(name).string() << '\n';
  }

  /// Logs and stores the resolved configuration. Call after every key has been read.
  void log_config() const {
    std::cout << "# resolved config (" << cfg.hash_hex() << ")\n" << cfg.resolved();
    auto f = open(command + ".config.txt");
    provenance().write_comment(f);
    f << cfg.resolved();
  }
};

std::string require_path(Context& ctx, const std::string& key) {
  const auto p = ctx.cfg.get(key, std::string{});
  if (p.empty()) throw ValidationFailure("missing required setting '" + key + "' (use --set " + key + "=PATH)");
  if (!fs::exists(p)) throw ValidationFailure(key + ": file not found: " + p);
  return p;
}

std::vector<DatasetRow> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationFailure("cannot open dataset " + path);
  auto rows = read_dataset(in);
  if (rows.empty()) throw ValidationFailure("dataset " + path + " has no rows");
  return rows;
}

std::shared_ptr<AnswerAgent> load_answer(Context& ctx) {
  return std::make_shared<AnswerAgent>(AnswerAgent::from_checkpoint(Checkpoint::load_file(require_path(ctx, "answer"))));
}

std::shared_ptr<BaselineModel> load_baseline(Context& ctx) {
  return std::make_shared<BaselineModel>(
      BaselineModel::from_checkpoint(Checkpoint::load_file(require_path(ctx, "baseline"))));
}

std::shared_ptr<const ppo::ActorCritic> load_policy(const std::string& path, ppo::ActionKind kind) {
  auto p = std::make_shared<const ppo::ActorCritic>(ppo::ActorCritic::from_checkpoint(Checkpoint::load_file(path)));
  if (p->kind() != kind)
    throw ValidationFailure(path + ": wrong action head for this command");
  return p;
}

struct UserSplit {
  std::vector<DatasetRow> train, validation, test;
};

UserSplit split_users(Context& ctx, const std::vector<DatasetRow>& rows) {
  const int val_start = ctx.cfg.get("val_start_user", 35);
  const int test_start = ctx.cfg.get("test_start_user", 40);
  if (!(val_start < test_start)) throw ValidationFailure("val_start_user must be below test_start_user");
  UserSplit s;
  for (const auto& r : rows)
    (r.user_id < val_start ? s.train : r.user_id < test_start ? s.validation : s.test).push_back(r);
  if (s.train.empty() || s.validation.empty() || s.test.empty())
    throw ValidationFailure("user split leaves an empty train, validation or test set");
  return s;
}

ppo::PpoConfig read_ppo(Context& ctx, ppo::PpoConfig d) {
  d.total_steps = ctx.cfg.get("steps", d.total_steps);
  d.lr = ctx.cfg.get("lr", d.lr);
  d.gamma = ctx.cfg.get("gamma", d.gamma);
  d.clip = ctx.cfg.get("clip", d.clip);
  d.rollout_len = ctx.cfg.get("rollout", d.rollout_len);
  d.epochs = ctx.cfg.get("ppo_epochs", d.epochs);
  d.minibatch = ctx.cfg.get("minibatch", d.minibatch);
  d.entropy_coef = ctx.cfg.get("entropy", d.entropy_coef);
  d.use_gae = ctx.cfg.get("gae", d.use_gae);
  d.gae_lambda = ctx.cfg.get("gae_lambda", d.gae_lambda);
  d.seed = ctx.seed;
  return d;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(Context& ctx) {
  const int users = ctx.cfg.get("users", 50);
  const int trials = ctx.cfg.get("trials", 500);
  const auto name = ctx.cfg.get("output", std::string("dataset.csv"));
  ctx.log_config();
  if (users < 1 || trials < 1) throw ValidationFailure("users and trials must be >= 1");
  const auto rows = generate_dataset(users, trials, PopulationConfig{}, ctx.seed);
  auto f = ctx.open_stamped(name);
  write_dataset(f, rows);
  const auto pressured = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.pressure; });
  std::cout << "rows " << rows.size() << " pressured_fraction " << double(pressured) / double(rows.size()) << '\n'
            << "wrote " << ctx.out(name).string() << '\n';
  return 0;
}

int cmd_fixtures(Context& ctx) {
  const double duration = ctx.cfg.get("duration_s", 20.0);
  const double dt = ctx.cfg.get("dt_s", 0.1);
  const int frames = ctx.cfg.get("frames", 25);
  ctx.log_config();
  if (!(duration > 0.0) || !(dt > 0.0) || frames < 0) throw ValidationFailure("duration_s, dt_s must be positive");
  auto f = ctx.open("fill_fixture.csv");
  write_fill_fixture(f, duration, dt);
  std::cout << "wrote " << ctx.out("fill_fixture.csv").string() << '\n';
  for (int step = 0; step < frames; ++step) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%02d.pgm", step);
    std::ofstream img(ctx.out(name), std::ios::binary);
    write_pgm(img, render_frame(step, true));
  }
  if (frames > 0) std::cout << "wrote " << frames << " pressure frames\n";
  return 0;
}

int cmd_train_answer(Context& ctx) {
  AnswerAgentConfig c;
  const int bank_size = ctx.cfg.get("bank", 5000);
  const int holdout = ctx.cfg.get("holdout", 5000);
  c.epochs = ctx.cfg.get("epochs", c.epochs);
  c.lr = ctx.cfg.get("lr", 2e-3);
  c.hidden = ctx.cfg.get("hidden", c.hidden);
  c.aux_weight = ctx.cfg.get("aux_weight", c.aux_weight);
  c.accuracy_floor = ctx.cfg.get("accuracy_floor", c.accuracy_floor);
  c.seed = ctx.seed;
  ctx.log_config();
  if (bank_size < 1) throw ValidationFailure("bank must be >= 1");
  QuestionGenerator gen(ctx.seed);
  const auto bank = gen.take(static_cast<std::size_t>(bank_size));
  auto curve = ctx.open_stamped("answer_curve.csv");
  curve << "epoch,loss,train_accuracy\n";
  auto result = train_answer_agent(bank, c, [&](int epoch, double loss, double acc) {
    curve << epoch << ',' << loss << ',' << acc << '\n';
    std::cout << "epoch " << epoch << " loss " << loss << " train_acc " << acc << '\n';
  });
  if (holdout > 0) {
    QuestionGenerator other(ctx.seed ^ 0x9e3779b97f4a7c15ULL);
    std::cout << "holdout_accuracy " << result.model.accuracy(other.take(static_cast<std::size_t>(holdout))) << '\n';
  }
  ctx.save(result.model.to_checkpoint(), "answer.ckpt");
  return 0;
}

int cmd_train_baseline(Context& ctx) {
  const auto data = require_path(ctx, "data");
  auto agent = load_answer(ctx);
  BaselineConfig bc;
  bc.svm_c = ctx.cfg.get("svm_c", bc.svm_c);
  bc.ridge_lambda = ctx.cfg.get("ridge", bc.ridge_lambda);
  bc.seed = ctx.seed;
  const auto rows = load_dataset(data);
  auto split = split_users(ctx, rows);
  ctx.log_config();
  FeatureCache fc(agent);
  const auto fit = fit_baseline(baseline_rows(split.train, fc), bc);
  std::cout << "train_rows " << fit.report.train_rows << " holdout_rows " << fit.report.holdout_rows
            << " holdout_choice_accuracy " << fit.report.holdout_choice_accuracy << " holdout_rt_mape "
            << fit.report.holdout_rt_mape << '\n';
  ctx.save(fit.model.to_checkpoint(), "baseline.ckpt");
  return 0;
}

int cmd_train_sim(Context& ctx) {
  const auto data = require_path(ctx, "data");
  auto agent = load_answer(ctx);
  auto baseline = load_baseline(ctx);
  const auto rows = load_dataset(data);
  auto split = split_users(ctx, rows);
  auto pc = read_ppo(ctx, sim_ppo_config());
  pc.checkpoint_every = ctx.cfg.get("select_every", pc.checkpoint_every);
  ctx.log_config();

  auto lookup = make_baseline_lookup(baseline, std::make_shared<FeatureCache>(agent));
  const auto train = build_trial_specs(split.train, lookup);
  const auto val = build_trial_specs(split.validation, lookup);
  const auto test = build_trial_specs(split.test, lookup);
  auto sel = train_sim_agent_selected(train, val, pc);
  {
    auto f = ctx.open_stamped("sim_curve.csv");
    ppo::write_learning_curve(f, sel.run.curve);
  }
  const auto ev = evaluate_sim_agent(greedy_policy(sel.policy), test);
  {
    auto f = ctx.open_stamped("sim_trace.csv");
    write_sim_trace(f, ev.trace);
  }
  std::cout << "selected_step " << sel.selected_step << " validation_mape " << sel.validation_mape << '\n'
            << "test_sim_mape " << ev.sim_mape << " test_baseline_mape " << ev.baseline_mape << '\n';
  auto ck = sel.policy.to_checkpoint();
  ck.meta["test_sim_mape"] = std::to_string(ev.sim_mape);
  ck.meta["test_baseline_mape"] = std::to_string(ev.baseline_mape);
  ctx.save(std::move(ck), "sim.ckpt");
  return 0;
}

int cmd_train_reg(Context& ctx) {
  const auto user = ctx.cfg.get("user", std::string("sim"));
  RegulationConfig reg;
  reg.trials = ctx.cfg.get("trials", reg.trials);
  auto pc = read_ppo(ctx, regulation_ppo_config());
  std::function<std::shared_ptr<UserModel>()> make_user;
  if (user == "sim") {
    auto sim = load_policy(require_path(ctx, "sim"), ppo::ActionKind::ContinuousBounded);
    auto lookup = make_baseline_lookup(load_baseline(ctx), std::make_shared<FeatureCache>(load_answer(ctx)));
    make_user = [sim, lookup] { return std::make_shared<SimAgentUserModel>(sim, lookup); };
  } else if (user == "synthetic") {
    make_user = [] { return std::make_shared<SyntheticUserModel>(PopulationConfig{}); };
  } else if (user == "deterministic") {
    make_user = [] { return std::make_shared<SyntheticUserModel>(SyntheticUserConfig{}.deterministic()); };
  } else {
    throw ValidationFailure("user must be one of sim, synthetic, deterministic (got '" + user + "')");
  }
  ctx.log_config();
  auto run = train_regulation_agent(make_user, reg, pc);
  {
    auto f = ctx.open_stamped("reg_curve.csv");
    ppo::write_learning_curve(f, run.curve);
  }
  if (run.stopped_early) std::cout << "stopped early: " << run.stop_reason << '\n';
  if (!run.curve.empty()) std::cout << "final_mean_return " << run.curve.back().mean_return << '\n';
  ctx.save(run.policy.to_checkpoint(), "reg.ckpt");
  return 0;
}

int cmd_eval(Context& ctx) {
  const int users = ctx.cfg.get("users", 100);
  const int trials = ctx.cfg.get("trials", 100);
  const auto policy_path = ctx.cfg.get("policy", std::string{});
  ctx.log_config();
  std::vector<std::pair<std::string, PressurePolicy>> policies;
  if (!policy_path.empty()) {
    if (!fs::exists(policy_path)) throw ValidationFailure("policy: file not found: " + policy_path);
    policies.emplace_back("rl", greedy_pressure_policy(load_policy(policy_path, ppo::ActionKind::Binary)));
  }
  policies.emplace_back("random", random_pressure_policy());
  policies.emplace_back("none", constant_pressure_policy(false));
  policies.emplace_back("always_on", constant_pressure_policy(true));
  const auto reports = compare_policies(policies, PopulationConfig{}, users, trials, ctx.seed);

  auto summary = ctx.open_stamped("eval_summary.csv");
  summary << "policy,mean_reduction\n";
  std::cout << "policy mean_reduction feedback_pct_per_block\n";
  for (const auto& r : reports) {
    summary << r.name << ',' << r.mean_reduction << '\n';
    std::cout << r.name << ' ' << r.mean_reduction;
    for (const auto& b : r.pooled_blocks.blocks) std::cout << ' ' << 100.0 * b.feedback_fraction;
    std::cout << '\n';
    auto d = ctx.open_stamped("eval_delta_" + r.name + ".csv");
    write_delta_csv(d, r.pooled_delta);
    auto b = ctx.open_stamped("eval_blocks_" + r.name + ".csv");
    write_block_csv(b, r.pooled_blocks);
  }
  if (reports.size() >= 2 && reports.front().name == "rl")
    std::cout << "rl_vs_random_bootstrap "
              << bootstrap_positive_fraction(reports[0].reductions, reports[1].reductions, 2000, ctx.seed) << '\n';
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(Context& ctx) {
  const auto host = ctx.cfg.get("host", std::string("127.0.0.1"));
  const int port = ctx.cfg.get("port", 8080);
  const auto policy_path = ctx.cfg.get("policy", std::string{});
  session::ServiceConfig sc;
  sc.data_dir = ctx.cfg.get("data_dir", (ctx.out_dir / "sessions").string());
  sc.protocol.rest1_s = ctx.cfg.get("rest1_s", sc.protocol.rest1_s);
  sc.protocol.rest2_s = ctx.cfg.get("rest2_s", sc.protocol.rest2_s);
  sc.protocol.rest3_s = ctx.cfg.get("rest3_s", sc.protocol.rest3_s);
  sc.protocol.sample_rl_policy = ctx.cfg.get("sample_policy", false);
  ctx.log_config();
  std::shared_ptr<const ppo::ActorCritic> policy;
  if (!policy_path.empty()) {
    if (!fs::exists(policy_path)) throw ValidationFailure("policy: file not found: " + policy_path);
    policy = load_policy(policy_path, ppo::ActionKind::Binary);
  } else {
    std::cout << "no policy given; RL-group sessions will be rejected\n";
  }
  session::SessionService service(sc, policy);
  httplib::Server server;
  session::register_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "listening on " << host << ':' << port << " (sessions in " << sc.data_dir.string() << ")" << std::endl;
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-agent time-pressure regulation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path, out_dir = ".";
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seed, "global seed")->default_val(0);
  app.add_option("--out", out_dir, "output directory")->default_val(".");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(Context&);
  };
  const Sub subs[] = {
      {"gen-data", "generate a synthetic-user dataset (users, trials, output)", cmd_gen_data},
      {"fixtures", "write the stimulus fill fixture and pressure frames (duration_s, dt_s, frames)", cmd_fixtures},
      {"train-answer", "train the answer agent (bank, epochs, lr, hidden)", cmd_train_answer},
      {"train-baseline", "fit the baseline predictor (data, answer)", cmd_train_baseline},
      {"train-sim", "train the simulation agent (data, answer, baseline, steps)", cmd_train_sim},
      {"train-reg", "train the regulation agent (user=sim|synthetic|deterministic, steps)", cmd_train_reg},
      {"eval", "compare pressure policies on synthetic users (policy, users, trials)", cmd_eval},
      {"serve", "run the trial server (policy, port, data_dir)", cmd_serve},
  };
  for (const auto& s : subs) app.add_subcommand(s.name, s.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  for (const auto& s : subs) {
    if (!app.got_subcommand(s.name)) continue;
    Context ctx;
    ctx.command = s.name;
    try {
      if (!config_path.empty()) ctx.cfg = RunConfig::load(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationFailure("--set expects key=value, got '" + kv + "'");
        ctx.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      ctx.cfg.set("seed", std::to_string(seed));
      ctx.seed = seed;
      ctx.out_dir = out_dir;
      fs::create_directories(ctx.out_dir);
      return s.run(ctx);
    } catch (const ValidationFailure& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const std::exception& e) {
      std::cerr << "runtime error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  return kExitValidation;
}
