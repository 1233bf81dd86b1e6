// Copyright 2026 The teesim developers. Licensed under the Apache License,
// Version 2.0. See the COPYING file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
//
// teesim: scenario runner and analytical calculators for the TEE-backed
// off-chain confidential contract execution simulator.

#include "teesim/analysis.hpp"
#include "teesim/sim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace teesim;

namespace
{

constexpr int EXIT_VIOLATION = 1;
constexpr int EXIT_USAGE = 2;

void
write_metrics_csv(std::ostream& os, const RunReport& rep)
{
    os << "index,user,contract,fn,deploy,submit_block,result_block,"
          "latency_blocks,status,onchain_cost\n";
    for (const auto& r : rep.requests)
    {
        os << r.index << ',' << r.user << ',' << r.contract << ',' << r.fn
           << ',' << (r.is_deploy ? 1 : 0) << ',' << r.submit_block << ',';
        if (r.result_block)
            os << *r.result_block;
        os << ',';
        if (r.result_block)
            os << (*r.result_block - r.submit_block);
        os << ',' << r.status.value_or("") << ',' << r.onchain_cost << '\n';
    }
}

int
run_one(const Scenario& sc, const fs::path& outDir, const std::string& format,
        bool verbose)
{
    Simulation sim(sc);
    sim.run();
    const auto& rep = sim.report();

    fs::create_directories(outDir);
    {
        std::ofstream f(outDir / "report.json");
        f << rep.to_json().dump(2) << '\n';
    }
    {
        std::ofstream f(outDir / "chain.jsonl");
        std::ofstream g(outDir / "state.jsonl");
        auto& lg = sim.ledger();
        for (std::uint64_t n = 0; n <= lg.height(); ++n)
        {
            f << chain_dump_line(lg.get_block(n)).dump() << '\n';
            g << state_snapshot(lg.state_at(n)).dump() << '\n';
        }
    }
    {
        std::ofstream f(outDir / "metrics.csv");
        write_metrics_csv(f, rep);
    }
    {
        auto blobDir = outDir / "blobs";
        fs::create_directories(blobDir);
        nlohmann::json index;
        for (const auto& [digest, blob] : sim.shadow_store().all())
        {
            std::ofstream f(blobDir / digest.hex(), std::ios::binary);
            f.write(reinterpret_cast<const char*>(blob.ciphertext.data()),
                    static_cast<std::streamsize>(blob.ciphertext.size()));
            index[digest.hex()] = {
                {"kind", static_cast<int>(blob.kind)},
                {"bytes", blob.ciphertext.size()},
            };
        }
        std::ofstream f(blobDir / "index.json");
        f << index.dump(2) << '\n';
    }

    if (verbose)
    {
        for (const auto& p : rep.publishes)
            std::cout << "block " << p.block << " publish node " << p.node
                      << " [" << p.start << "," << p.end << "] "
                      << (p.accepted ? "accepted" : "rejected: " + p.reason)
                      << '\n';
    }
    if (format == "json")
        std::cout << rep.to_json().dump(2) << '\n';
    else if (format == "csv")
        write_metrics_csv(std::cout, rep);
    else
        std::cout << rep.scenario << ": " << rep.blocks << " blocks, "
                  << rep.requests.size() << " requests, "
                  << rep.remunerations << " publishes paid, "
                  << rep.taint_violations.size() << " taint violations, "
                  << rep.invariant_violations.size()
                  << " invariant violations\n";

    bool bad =
        !rep.taint_violations.empty() || !rep.invariant_violations.empty();
    return bad ? EXIT_VIOLATION : 0;
}

struct SweepSpec
{
    std::string field;
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;
};

SweepSpec
parse_sweep(const std::string& text)
{
    auto eq = text.find('=');
    auto colon = text.find(':', eq + 1);
    if (eq == std::string::npos || colon == std::string::npos)
        throw CLI::ValidationError("--param expects field=lo:hi");
    SweepSpec spec;
    spec.field = text.substr(0, eq);
    spec.lo = std::stoull(text.substr(eq + 1, colon - eq - 1));
    spec.hi = std::stoull(text.substr(colon + 1));
    if (spec.lo > spec.hi)
        throw CLI::ValidationError("--param range is empty");
    return spec;
}

void
apply_sweep_value(Scenario& sc, const std::string& field, std::uint64_t v)
{
    if (field == "c" || field == "committee_size")
        sc.params.committee_size = v;
    else if (field == "nodes")
        sc.nodes = static_cast<std::uint32_t>(v);
    else if (field == "s")
        sc.params.subnet_size = v;
    else if (field == "t")
        sc.params.confirm_threshold = v;
    else if (field == "mkrp")
        sc.params.mkrp = v;
    else
        throw CLI::ValidationError("unknown sweep field '" + field + "'");
}

}

int
main(int argc, char** argv)
{
    CLI::App app{"Deterministic simulator for TEE-backed off-chain "
                 "confidential contract execution"};
    app.require_subcommand(1);

    // ---- run ----
    std::string scenarioPath, outDir = "out", format = "summary";
    std::optional<std::uint64_t> seedOverride;
    bool verbose = false;
    auto* run = app.add_subcommand("run", "Execute a scenario file");
    run->add_option("scenario", scenarioPath, "Scenario JSON file")
        ->required();
    run->add_option("--seed", seedOverride, "Override the scenario seed");
    run->add_option("--out", outDir, "Output directory");
    run->add_option("--format", format, "Stdout format: summary|json|csv")
        ->check(CLI::IsMember({"summary", "json", "csv"}));
    run->add_flag("--verbose", verbose, "Print per-publish progress");

    // ---- analyze ----
    auto* analyze = app.add_subcommand("analyze", "Closed-form calculators");
    analyze->require_subcommand(1);

    std::uint64_t an = 0, am = 0, as = 0;
    std::optional<std::uint64_t> at;
    std::optional<double> aratio;
    std::string csvPath;
    auto* rsts = analyze->add_subcommand(
        "rsts", "Dissemination-attack probability (exact)");
    rsts->add_option("--n", an, "total nodes")->required();
    rsts->add_option("--m", am, "adversary-controlled nodes")->required();
    rsts->add_option("--s", as, "subnet size")->required();
    rsts->add_option("--t", at, "confirmation threshold");
    rsts->add_option("--ratio", aratio,
                     "threshold as a fraction of s (prints floor and ceil "
                     "readings)");
    rsts->add_option("--csv", csvPath, "Also write a CSV table");

    std::uint64_t ln = 0, lc = 0, lt = 0, ltrials = 0, lseed = 1;
    auto* liveness = analyze->add_subcommand(
        "liveness", "Probability a request is served within t rounds");
    liveness->add_option("--n", ln, "total nodes")->required();
    liveness->add_option("--c", lc, "committee size")->required();
    liveness->add_option("--t", lt, "rounds")->required();
    liveness->add_option("--trials", ltrials,
                         "cross-check with Monte-Carlo trials");
    liveness->add_option("--seed", lseed, "Monte-Carlo seed");

    // ---- sweep ----
    std::string sweepScenario, sweepParam, sweepOut = "sweep_out";
    std::uint64_t sweepTrials = 5, sweepSeed = 1;
    auto* sweep = app.add_subcommand(
        "sweep", "Run a scenario grid with per-cell Monte-Carlo trials");
    sweep->add_option("scenario", sweepScenario, "Scenario template JSON")
        ->required();
    sweep->add_option("--param", sweepParam, "field=lo:hi (e.g. c=1:10)")
        ->required();
    sweep->add_option("--trials", sweepTrials, "Seeded runs per grid cell");
    sweep->add_option("--seed", sweepSeed, "Base seed");
    sweep->add_option("--out", sweepOut, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*run)
        {
            auto sc = load_scenario(scenarioPath);
            if (seedOverride)
                sc.seed = *seedOverride;
            return run_one(sc, outDir, format, verbose);
        }

        if (*rsts)
        {
            std::vector<std::array<std::uint64_t, 4>> grid;
            if (at)
                grid.push_back({an, am, as, *at});
            if (aratio)
            {
                auto lo = static_cast<std::uint64_t>(*aratio * as);
                auto hi = static_cast<std::uint64_t>(
                    std::ceil(*aratio * static_cast<double>(as)));
                grid.push_back({an, am, as, lo});
                if (hi != lo)
                    grid.push_back({an, am, as, hi});
            }
            if (grid.empty())
                throw CLI::ValidationError("need --t or --ratio");
            auto rows = rsts_sweep(grid);
            for (const auto& row : rows)
            {
                std::cout << "n=" << row.n << " m=" << row.m << " s=" << row.s
                          << " t=" << row.t
                          << " epsilon=" << rational_str(row.epsilon.exact);
                if (row.epsilon.exact != 0)
                    std::cout << " (log10 " << row.epsilon.log10() << ")";
                if (row.reference_cell)
                    std::cout << " [reference cell]";
                std::cout << '\n';
            }
            if (!csvPath.empty())
            {
                std::ofstream f(csvPath);
                emit_rsts_csv(f, rows);
            }
            return 0;
        }

        if (*liveness)
        {
            LivenessQuery q{ln, lc, lt, 1};
            auto d = liveness_delta(q);
            std::cout << "delta=" << d.approx()
                      << " exact=" << rational_str(d.exact) << '\n';
            if (ltrials > 0)
            {
                auto mc = liveness_montecarlo(q, ltrials, lseed);
                std::cout << "monte_carlo=" << mc.p_hat
                          << " std_error=" << mc.std_error << " trials="
                          << mc.trials << '\n';
            }
            return 0;
        }

        if (*sweep)
        {
            auto spec = parse_sweep(sweepParam);
            auto cells = spec.hi - spec.lo + 1;
            if (cells * sweepTrials > 10000)
            {
                std::cerr << "sweep too large (" << cells * sweepTrials
                          << " runs); shrink the range or --trials\n";
                return EXIT_USAGE;
            }
            fs::create_directories(sweepOut);
            std::ofstream rowsCsv(fs::path(sweepOut) / "sweep.csv");
            rowsCsv << spec.field
                    << ",seed,blocks,requests,completed,mean_latency,"
                       "max_latency,gaps,publishes_accepted,"
                       "publishes_rejected,taint_violations\n";
            std::ofstream aggCsv(fs::path(sweepOut) / "summary.csv");
            aggCsv << spec.field
                   << ",trials,mean_gaps,mean_first_response_latency\n";
            for (auto v = spec.lo; v <= spec.hi; ++v)
            {
                double gapSum = 0, latSum = 0;
                std::uint64_t latCount = 0;
                for (std::uint64_t trial = 0; trial < sweepTrials; ++trial)
                {
                    auto sc = load_scenario(sweepScenario);
                    apply_sweep_value(sc, spec.field, v);
                    sc.seed = sweepSeed + trial * 7919 + v;
                    Simulation sim(std::move(sc));
                    sim.run();
                    const auto& rep = sim.report();
                    std::uint64_t done = 0, latMax = 0, latTot = 0, acc = 0,
                                  rej = 0;
                    for (const auto& r : rep.requests)
                        if (r.result_block)
                        {
                            ++done;
                            auto lat = *r.result_block - r.submit_block;
                            latTot += lat;
                            latMax = std::max(latMax, lat);
                        }
                    for (const auto& p : rep.publishes)
                        (p.accepted ? acc : rej) += 1;
                    rowsCsv << v << ',' << rep.seed << ',' << rep.blocks << ','
                            << rep.requests.size() << ',' << done << ','
                            << (done ? static_cast<double>(latTot) / done
                                     : 0.0)
                            << ',' << latMax << ','
                            << rep.availability_gaps.size() << ',' << acc
                            << ',' << rej << ','
                            << rep.taint_violations.size() << '\n';
                    gapSum +=
                        static_cast<double>(rep.availability_gaps.size());
                    if (done)
                    {
                        latSum += static_cast<double>(latTot) / done;
                        ++latCount;
                    }
                }
                aggCsv << v << ',' << sweepTrials << ','
                       << gapSum / sweepTrials << ','
                       << (latCount ? latSum / latCount : 0.0) << '\n';
            }
            std::cout << "sweep written to " << sweepOut << '\n';
            return 0;
        }
    }
    catch (const ScenarioError& e)
    {
        std::cerr << "scenario error: " << e.what() << '\n';
        return EXIT_USAGE;
    }
    catch (const std::invalid_argument& e)
    {
        std::cerr << "invalid parameters: " << e.what() << '\n';
        return EXIT_USAGE;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return EXIT_USAGE;
    }
    return 0;
}
