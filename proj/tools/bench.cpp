// Copyright (c) 2026 The mvci Authors
// SPDX-License-Identifier: Apache-2.0
//
// bench: drives the runtime's benchmark scenarios and emits CSV rows with
// the schema benchmark,mode,threads,vcis,msg_size,iters,metric,value,run_id.
// Rows go to --csv PATH, or to stdout when no path is given; human-readable
// summaries and lock statistics go to stderr so piped CSV stays clean.
// Every scenario validates its data before reporting timing, and the exit
// status is nonzero whenever validation fails.
//
// BENCH_SEED in the environment reseeds the deterministic generators used
// for payloads and sparsity patterns (default 0xC0FFEE).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mvci/bench/bspmm.hpp"
#include "mvci/bench/deadlock.hpp"
#include "mvci/bench/ebms.hpp"
#include "mvci/bench/msgrate.hpp"
#include "mvci/bench/senders.hpp"
#include "mvci/bench/stencil.hpp"

namespace {

using namespace mvci;
using namespace mvci::bench;

struct CliCommon {
  std::string mode = "par";
  std::string cs = "fgcache";
  std::string rma = "hw";
  std::string csv_path;
  BenchOptions opts;
  bool vcis_given = false;
};

void add_common(CLI::App* sub, CliCommon& c) {
  sub->add_option("--mode", c.mode,
                  "Thread topology: ser (one shared communicator), par (one "
                  "communicator per flow), ep (user-visible endpoints), "
                  "everywhere (single-threaded ranks)")
      ->default_val(c.mode);
  sub->add_option("--threads", c.opts.threads, "Worker threads per rank")
      ->default_val(c.opts.threads);
  auto* v = sub->add_option("--vcis", c.opts.vcis,
                            "Usable VCIs beyond the fallback context")
                ->default_val(c.opts.vcis);
  v->each([&c](const std::string&) { c.vcis_given = true; });
  sub->add_option("--cs", c.cs,
                  "Critical-section mode: global, fg, fgcache")
      ->default_val(c.cs);
  sub->add_option("--msg-size", c.opts.msg_size, "Payload bytes")
      ->default_val(c.opts.msg_size);
  sub->add_option("--iters", c.opts.iters, "Messages (or tasks) per flow")
      ->default_val(c.opts.iters);
  sub->add_option("--rma", c.rma, "RMA completion path: hw or sw")
      ->default_val(c.rma);
  sub->add_option("--reps", c.opts.reps,
                  "Timed repetitions (one extra warmup rep is discarded)")
      ->default_val(c.opts.reps);
  sub->add_option("--window", c.opts.window,
                  "Outstanding operations between credit/flush points")
      ->default_val(c.opts.window);
  sub->add_option("--csv", c.csv_path, "Write CSV rows to this file");
  sub->add_flag("--dump-lock-stats", c.opts.dump_lock_stats,
                "Print per-VCI lock acquisition/contention counters");
}

// Returns false on a bad enum string.
bool finish_common(CliCommon& c, std::string& err) {
  if (!parse_mode(c.mode, c.opts.mode)) {
    err = "unknown --mode '" + c.mode + "'";
    return false;
  }
  if (c.cs == "global") {
    c.opts.cs = CsMode::Global;
  } else if (c.cs == "fg") {
    c.opts.cs = CsMode::FG;
  } else if (c.cs == "fgcache") {
    c.opts.cs = CsMode::FGCache;
  } else {
    err = "unknown --cs '" + c.cs + "'";
    return false;
  }
  if (c.rma == "hw") {
    c.opts.rma = RmaMode::HardwareRMA;
  } else if (c.rma == "sw") {
    c.opts.rma = RmaMode::SoftwareRMA;
  } else {
    err = "unknown --rma '" + c.rma + "'";
    return false;
  }
  return true;
}

int emit(const CliCommon& c, const std::vector<Row>& rows, bool correct,
         const std::string& error, const std::string& lock_stats,
         const std::string& summary) {
  if (!correct) {
    std::cerr << "FAILED: " << (error.empty() ? "validation failed" : error)
              << "\n";
    return 1;
  }
  if (c.csv_path.empty()) {
    write_csv(std::cout, rows);
  } else {
    std::ofstream f(c.csv_path);
    if (!f) {
      std::cerr << "cannot open " << c.csv_path << "\n";
      return 1;
    }
    write_csv(f, rows);
  }
  if (!summary.empty()) std::cerr << summary << "\n";
  if (c.opts.dump_lock_stats && !lock_stats.empty())
    std::cerr << lock_stats << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "bench: message-rate, deadlock, halo-exchange, band-fetch, block-sparse "
      "matmul and multi-sender scenarios for the VCI runtime.\n"
      "CSV schema: benchmark,mode,threads,vcis,msg_size,iters,metric,value,"
      "run_id (run_id 0 = median of the repetitions).\n"
      "BENCH_SEED reseeds the deterministic payload/sparsity generators."};
  app.require_subcommand(1);

  // msgrate
  CliCommon mr;
  std::string mr_op = "isend";
  auto* s_mr = app.add_subcommand(
      "msgrate",
      "Pairwise-flow message rate against the transport's virtual clock; "
      "reports virtual_rate (context-equivalents kept busy) and wall rate. "
      "With --target-compute-us > 0 it becomes a put+flush latency probe "
      "against a busy target.");
  add_common(s_mr, mr);
  s_mr->add_option("--op", mr_op, "isend or put")->default_val(mr_op);
  s_mr->add_option("--target-compute-us", mr.opts.target_compute_us,
                   "Latency probe: target computes this long between polls")
      ->default_val(mr.opts.target_compute_us);
  s_mr->add_option("--distinct-comms", mr.opts.distinct_comms,
                   "Communicators to spread flows over (-1: one per flow)")
      ->default_val(mr.opts.distinct_comms);

  // deadlock
  CliCommon dl;
  std::string dl_which = "pt2pt";
  bool dl_hybrid = true;
  auto* s_dl = app.add_subcommand(
      "deadlock",
      "Stuck-without-global-progress programs. With --hybrid the waiters "
      "escalate to global progress and the run completes; with --no-hybrid "
      "a watchdog flags the run as stuck instead of hanging.");
  add_common(s_dl, dl);
  s_dl->add_option("--which", dl_which, "pt2pt or rma")->default_val(dl_which);
  s_dl->add_flag("--hybrid,!--no-hybrid", dl_hybrid,
                 "Escalate blocked waiters to global progress");

  // stencil
  CliCommon st;
  StencilShape st_shape;
  auto* s_st = app.add_subcommand(
      "stencil",
      "Halo exchange on a grid of ranks with a thread grid per rank. Each "
      "iteration after the warmup is one repetition row: halo_occupancy_ticks "
      "sums per-context busy ticks for that exchange. --threads and --reps "
      "are ignored (the thread grid and --iters decide).");
  add_common(s_st, st);
  s_st->add_option("--node-rows", st_shape.node_rows, "Rank grid rows")
      ->default_val(st_shape.node_rows);
  s_st->add_option("--node-cols", st_shape.node_cols, "Rank grid cols")
      ->default_val(st_shape.node_cols);
  s_st->add_option("--thread-rows", st_shape.thread_rows,
                   "Thread grid rows per rank")
      ->default_val(st_shape.thread_rows);
  s_st->add_option("--thread-cols", st_shape.thread_cols,
                   "Thread grid cols per rank")
      ->default_val(st_shape.thread_cols);
  s_st->add_option("--tile", st_shape.tile, "Cells per tile edge")
      ->default_val(st_shape.tile);

  // ebms
  CliCommon eb;
  auto* s_eb = app.add_subcommand(
      "ebms",
      "Every rank gets remote bands from every other rank's window and "
      "validates them. --msg-size is the band size in bytes. Mode ep is an "
      "alias of par here: band fetches are one-sided, so per-thread windows "
      "already give each thread a private stream and there is no endpoint "
      "variant to distinguish. --vcis 1 is the single-VCI configuration.");
  add_common(s_eb, eb);

  // bspmm
  CliCommon bm;
  BspmmShape bm_shape;
  std::string bm_acc = "ordered";
  auto* s_bm = app.add_subcommand(
      "bspmm",
      "Block-sparse matmul: workers steal (i,j) tasks via fetch_op on a "
      "shared counter, get operand tiles, and accumulate partial tiles into "
      "the result window. Modes: par (one result window; --acc ordered|none) "
      "or ep (per-endpoint accumulate lanes). Endpoints mode needs roughly "
      "--vcis 2*threads+2; left unset, --vcis adapts to the mode.");
  add_common(s_bm, bm);
  s_bm->add_option("--acc", bm_acc,
                   "Result-window accumulate ordering: ordered or none")
      ->default_val(bm_acc);
  s_bm->add_option("--tile-dim", bm_shape.tile_dim, "Tile edge, elements")
      ->default_val(bm_shape.tile_dim);
  s_bm->add_option("--grid", bm_shape.grid, "Tiles per matrix edge")
      ->default_val(bm_shape.grid);
  s_bm->add_option("--density", bm_shape.density,
                   "Fraction of operand tiles that are nonzero")
      ->default_val(bm_shape.density);

  // senders
  CliCommon sn;
  sn.opts.threads = 2;
  sn.opts.window = 3;
  sn.opts.iters = 1200;
  auto* s_sn = app.add_subcommand(
      "senders",
      "Multi-sender/single-receiver: --threads senders on rank 0, one "
      "receiver on rank 1. par iterates communicators; ep addresses one "
      "receiver endpoint. Reports msgs per 1000 receiver operations (the "
      "deterministic metric) and wall msgs/s. --window is the credit "
      "window (default 3).");
  add_common(s_sn, sn);

  CLI11_PARSE(app, argc, argv);

  std::string err;
  try {
    if (s_mr->parsed()) {
      if (!finish_common(mr, err)) {
        std::cerr << err << "\n";
        return 2;
      }
      RateOp op;
      if (!parse_rate_op(mr_op, op)) {
        std::cerr << "unknown --op '" << mr_op << "'\n";
        return 2;
      }
      MsgrateResult r = run_msgrate(mr.opts, op);
      std::ostringstream sum;
      if (mr.opts.target_compute_us > 0)
        sum << "msgrate latency probe: median " << r.median_latency_us
            << " us";
      else
        sum << "msgrate " << mode_name(mr.opts.mode) << ": median virtual "
            << "rate " << r.median_virtual_rate;
      return emit(mr, r.rows, r.correct, r.error, r.lock_stats, sum.str());
    }
    if (s_dl->parsed()) {
      if (!finish_common(dl, err)) {
        std::cerr << err << "\n";
        return 2;
      }
      DeadlockKind k;
      if (!parse_deadlock_kind(dl_which, k)) {
        std::cerr << "unknown --which '" << dl_which << "'\n";
        return 2;
      }
      DeadlockResult r = run_deadlock(k, dl_hybrid);
      std::ostringstream sum;
      sum << "deadlock " << dl_which << (dl_hybrid ? " hybrid" : " no-hybrid")
          << ": " << (r.completed ? "completed" : "stuck (watchdog)") << " in "
          << r.seconds << " s";
      return emit(dl, r.rows, r.ok, r.error, "", sum.str());
    }
    if (s_st->parsed()) {
      if (!finish_common(st, err)) {
        std::cerr << err << "\n";
        return 2;
      }
      StencilResult r = run_stencil(st.opts, st_shape);
      std::ostringstream sum;
      sum << "stencil " << mode_name(st.opts.mode) << ": median occupancy "
          << r.median_occupancy << " ticks/iteration";
      return emit(st, r.rows, r.correct, r.error, r.lock_stats, sum.str());
    }
    if (s_eb->parsed()) {
      if (!finish_common(eb, err)) {
        std::cerr << err << "\n";
        return 2;
      }
      if (eb.opts.mode == RunMode::Endpoints) eb.opts.mode = RunMode::ParComm;
      EbmsResult r = run_ebms(eb.opts);
      std::ostringstream sum;
      sum << "ebms " << mode_name(eb.opts.mode) << ": median band fetch "
          << r.median_fetch_us << " us";
      return emit(eb, r.rows, r.correct, r.error, r.lock_stats, sum.str());
    }
    if (s_bm->parsed()) {
      if (!finish_common(bm, err)) {
        std::cerr << err << "\n";
        return 2;
      }
      if (bm_acc == "none") {
        bm.opts.acc_ordering = AccOrdering::None;
      } else if (bm_acc == "ordered") {
        bm.opts.acc_ordering = AccOrdering::Ordered;
      } else {
        std::cerr << "unknown --acc '" << bm_acc << "'\n";
        return 2;
      }
      if (!bm.vcis_given) {
        bm.opts.vcis = bm.opts.mode == RunMode::Endpoints
                           ? 2 * bm.opts.threads + 2
                           : bm.opts.threads + 2;
      }
      BspmmResult r = run_bspmm(bm.opts, bm_shape);
      std::ostringstream sum;
      sum << "bspmm " << mode_name(bm.opts.mode) << ": median accumulate "
          << "initiation " << r.median_init_us << " us";
      return emit(bm, r.rows, r.correct, r.error, r.lock_stats, sum.str());
    }
    if (s_sn->parsed()) {
      if (!finish_common(sn, err)) {
        std::cerr << err << "\n";
        return 2;
      }
      if (!sn.vcis_given) sn.opts.vcis = sn.opts.threads;
      SendersResult r = run_senders(sn.opts);
      std::ostringstream sum;
      sum << "senders " << mode_name(sn.opts.mode) << ": median "
          << r.median_rate << " msgs per 1000 receiver ops, "
          << r.median_wall_rate << " msgs/s wall";
      return emit(sn, r.rows, r.correct, r.error, r.lock_stats, sum.str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
