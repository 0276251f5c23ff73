#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tstream/crc32c.hpp"
#include "tstream/error.hpp"
#include "tstream/harness.hpp"
#include "tstream/oracle.hpp"
#include "tstream/trace.hpp"

namespace fs = std::filesystem;
using namespace tstream;

namespace {

constexpr int kExitFailed = 3;

struct WorkloadFlags {
  WorkloadSpec spec;
  std::string scenario = "synthetic";
  std::string arrival = "closed";
};

void add_workload_flags(CLI::App* app, WorkloadFlags& f) {
  app->add_option("--events", f.spec.events, "events to generate")->capture_default_str();
  app->add_option("--keys", f.spec.keys, "key space (patients and segments for scenarios)")
      ->capture_default_str();
  app->add_option("--zipf", f.spec.zipf, "Zipf exponent, 0 = uniform")->capture_default_str();
  app->add_option("--mix", f.spec.mix, "fraction of update events")->capture_default_str();
  app->add_option("--rate", f.spec.rate, "events per second of event time")->capture_default_str();
  app->add_option("--arrival", f.arrival, "closed or fixed")
      ->check(CLI::IsMember({"closed", "fixed"}))
      ->capture_default_str();
  app->add_option("--seed", f.spec.seed, "rng seed")->capture_default_str();
  app->add_option("--scenario", f.scenario, "synthetic, healthcare or traffic")
      ->check(CLI::IsMember({"synthetic", "healthcare", "traffic"}))
      ->capture_default_str();
  app->add_option("--max-keys-per-txn", f.spec.max_keys_per_txn)->capture_default_str();
}

WorkloadSpec finish(WorkloadFlags& f) {
  f.spec.scenario = parse_scenario(f.scenario);
  f.spec.arrival = f.arrival == "fixed" ? Arrival::FixedRate : Arrival::ClosedLoop;
  return f.spec;
}

struct EngineFlags {
  EngineConfig cfg;
  std::string scenario = "synthetic";
  std::string pipeline_file;
  std::string mode = "auto";
  std::string model = "logistic";
  std::optional<std::uint64_t> crash_at;
};

void add_engine_flags(CLI::App* app, EngineFlags& f) {
  auto& c = f.cfg;
  app->add_option("--executors", c.executors)->capture_default_str();
  app->add_option("--partitions", c.partitions)->capture_default_str();
  app->add_option("--max-versions", c.max_versions)->capture_default_str();
  app->add_option("--hash-seed", c.hash_seed)->capture_default_str();
  app->add_option("--batch-size", c.batch_size)->capture_default_str();
  app->add_option("--batch-timeout-ms", c.batch_timeout_ms)->capture_default_str();
  app->add_option("--queue-capacity", c.queue_capacity)->capture_default_str();
  app->add_option("--checkpoint-every", c.checkpoint_every, "epochs per checkpoint, 0 = none")
      ->capture_default_str();
  app->add_option("--fsync-every", c.fsync_every, "epochs per fsync")->capture_default_str();
  app->add_option("--submitters", c.submitters)->capture_default_str();
  app->add_flag("--manual-batches", c.manual_batches, "seal an epoch every batch-size admissions");
  app->add_flag("--paced", c.paced, "follow event timestamps");
  app->add_option("--scenario", f.scenario, "selects the default pipeline and mode")
      ->check(CLI::IsMember({"synthetic", "healthcare", "traffic"}))
      ->capture_default_str();
  app->add_option("--pipeline", f.pipeline_file, "pipeline JSON file");
  app->add_option("--mode", f.mode, "apply, learn or auto")
      ->check(CLI::IsMember({"apply", "learn", "auto"}))
      ->capture_default_str();
  app->add_option("--model", f.model, "logistic or linear")
      ->check(CLI::IsMember({"logistic", "linear"}))
      ->capture_default_str();
  app->add_option("--learning-rate", c.model.learning_rate)->capture_default_str();
  app->add_option("--l2", c.model.l2)->capture_default_str();
}

EngineConfig finish(EngineFlags& f) {
  EngineConfig c = f.cfg;
  const Scenario s = parse_scenario(f.scenario);
  c.label = f.scenario;
  c.pipeline = f.pipeline_file.empty() ? default_pipeline(s) : load_pipeline_file(f.pipeline_file);
  if (f.mode == "auto") c.mode = s == Scenario::Healthcare ? EngineMode::Learn : EngineMode::Apply;
  else c.mode = parse_mode(f.mode);
  c.model.kind = f.model == "linear" ? ModelKind::LinearRegression : ModelKind::LogisticRegression;
  c.crash_at = f.crash_at;
  return c;
}

void write_bytes(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

std::string render(const MetricsReport& r, const std::string& format) {
  if (format == "csv") return report_csv(r);
  if (format == "text") return report_text(r);
  return report_json(r);
}

std::string dump_summary(const Listing& dump) {
  const auto bytes = encode_listing(dump);
  char buf[96];
  std::snprintf(buf, sizeof buf, "keys %zu bytes %zu crc32c %08x", dump.size(), bytes.size(),
                crc32c(bytes));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transactional stream learning engine: workloads, runs and checks"};
  app.require_subcommand(1);

  WorkloadFlags gen;
  std::string gen_out;
  auto* generate_cmd = app.add_subcommand("generate", "write a seeded event trace");
  add_workload_flags(generate_cmd, gen);
  generate_cmd->add_option("--out", gen_out, "trace file")->required();

  EngineFlags run_flags;
  std::string run_trace, run_out, report_format = "json";
  bool no_durability = false;
  auto* run_cmd = app.add_subcommand("run", "replay a trace through the engine");
  run_cmd->add_option("--trace", run_trace)->required()->check(CLI::ExistingFile);
  add_engine_flags(run_cmd, run_flags);
  run_cmd->add_option("--out", run_out, "directory for report, final dump and engine state");
  run_cmd->add_option("--crash-at", run_flags.crash_at, "inject a crash at this WAL byte");
  run_cmd->add_flag("--resume", run_flags.cfg.resume, "recover the state in --out and continue");
  run_cmd->add_flag("--no-durability", no_durability, "do not log or checkpoint");
  run_cmd->add_option("--report-format", report_format)
      ->check(CLI::IsMember({"json", "csv", "text"}))
      ->capture_default_str();

  EngineFlags oracle_flags;
  std::string oracle_trace, oracle_out;
  auto* oracle_cmd = app.add_subcommand("oracle", "serial reference dump of a trace");
  oracle_cmd->add_option("--trace", oracle_trace)->required()->check(CLI::ExistingFile);
  oracle_cmd->add_option("--scenario", oracle_flags.scenario)
      ->check(CLI::IsMember({"synthetic", "healthcare", "traffic"}));
  oracle_cmd->add_option("--pipeline", oracle_flags.pipeline_file, "pipeline JSON file");
  oracle_cmd->add_option("--out", oracle_out, "dump file");

  EngineFlags rt_flags;
  WorkloadFlags rt_gen;
  std::string rt_trace, rt_out;
  std::size_t crash_points = 50;
  auto* rt_cmd = app.add_subcommand("recover-test", "crash, recover and resume at random WAL offsets");
  rt_cmd->add_option("--trace", rt_trace, "trace file (otherwise generated)")->check(CLI::ExistingFile);
  add_engine_flags(rt_cmd, rt_flags);
  rt_cmd->add_option("--events", rt_gen.spec.events)->capture_default_str();
  rt_cmd->add_option("--keys", rt_gen.spec.keys)->capture_default_str();
  rt_cmd->add_option("--zipf", rt_gen.spec.zipf)->capture_default_str();
  rt_cmd->add_option("--mix", rt_gen.spec.mix)->capture_default_str();
  rt_cmd->add_option("--seed", rt_gen.spec.seed)->capture_default_str();
  rt_cmd->add_option("--crash-points", crash_points)->capture_default_str();
  rt_cmd->add_option("--out", rt_out, "scratch directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate_cmd) {
      const auto trace = generate(finish(gen));
      write_trace_file(gen_out, trace);
      std::cout << "wrote " << trace.size() << " events to " << gen_out << '\n';
      return 0;
    }

    if (*run_cmd) {
      EngineConfig cfg = finish(run_flags);
      if (!run_out.empty() && !no_durability) cfg.out_dir = fs::path(run_out) / "state";
      const auto trace = read_trace_file(run_trace);
      RunResult r = run(trace, cfg);
      const std::string report = render(r.report, report_format);
      std::cout << report;
      if (!run_out.empty()) {
        fs::create_directories(run_out);
        const std::string ext = report_format == "text" ? "txt" : report_format;
        write_text(fs::path(run_out) / ("report." + ext), report);
        if (report_format != "json") write_text(fs::path(run_out) / "report.json", report_json(r.report));
        write_bytes(fs::path(run_out) / "final.dump", encode_listing(r.dump));
      }
      std::cerr << "final state: " << dump_summary(r.dump) << '\n';
      if (r.crashed) std::cerr << "engine halted: " << r.halt_reason << '\n';
      if (r.report.oracle_match == false) {
        std::cerr << "final state differs from the serial reference\n";
        return kExitFailed;
      }
      if (!r.report.reconciles()) {
        std::cerr << "event and outcome counts do not reconcile\n";
        return kExitFailed;
      }
      return 0;
    }

    if (*oracle_cmd) {
      EngineConfig cfg = finish(oracle_flags);
      const Listing dump = reference_dump(read_trace_file(oracle_trace), cfg);
      if (!oracle_out.empty()) write_bytes(oracle_out, encode_listing(dump));
      std::cout << dump_summary(dump) << '\n';
      return 0;
    }

    if (*rt_cmd) {
      EngineConfig cfg = finish(rt_flags);
      cfg.out_dir = rt_out;
      std::vector<StreamEvent> trace;
      if (rt_trace.empty()) {
        rt_gen.scenario = rt_flags.scenario;
        trace = generate(finish(rt_gen));
      } else {
        trace = read_trace_file(rt_trace);
      }
      const RecoverTestResult r = recover_test(trace, cfg, crash_points, rt_gen.spec.seed);
      std::cout << "wal bytes " << r.total_wal_bytes << '\n';
      std::size_t failed = 0;
      for (const auto& p : r.points) {
        std::cout << (p.ok() ? "ok   " : "FAIL ") << "crash_at " << p.crash_at << " restored_epoch "
                  << p.restored_epoch << " last_txn " << p.last_txn_id << " recovery_ms "
                  << p.recovery_ms;
        if (!p.detail.empty()) std::cout << " (" << p.detail << ')';
        std::cout << '\n';
        if (!p.ok()) ++failed;
      }
      std::cout << r.points.size() - failed << "/" << r.points.size() << " crash points passed\n";
      return failed == 0 ? 0 : kExitFailed;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
