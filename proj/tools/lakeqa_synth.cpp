// Writes synthetic inputs for the pipeline: a seed database plus an external
// table pool for benchgen, or a plain corpus for graph experiments. With
// --select it instead picks the desk question set from a benchgen output.
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include <CLI11.hpp>

#include "lakeqa/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic data for lakeqa"};
  std::uint64_t seed = 42;
  std::string out;
  std::size_t external = 500;
  std::size_t corpus_tables = 0;
  bool small = false;
  std::string select;
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--external-tables", external, "size of the distractor pool");
  app.add_option("--corpus-tables", corpus_tables, "write a plain corpus of this many tables instead");
  app.add_flag("--small", small, "three-table seed database");
  app.add_option("--select", select, "questions.json from benchgen; writes the selected questions to --out");
  CLI11_PARSE(app, argc, argv);

  try {
    if (!select.empty()) {
      std::vector<std::string> notes;
      const auto picked = lakeqa::select_questions(lakeqa::load_bench_questions(select), {}, &notes);
      nlohmann::json qs = nlohmann::json::array();
      for (const auto& q : picked) qs.push_back(q.to_json());
      std::ofstream(out) << nlohmann::json{{"format_version", 1}, {"questions", qs}}.dump(2) << "\n";
      for (const auto& n : notes) std::cout << n << "\n";
      std::cout << "selected " << picked.size() << " questions into " << out << "\n";
      return 0;
    }
    const std::filesystem::path dir(out);
    if (corpus_tables > 0) {
      lakeqa::save_corpus(lakeqa::synthetic_corpus(seed, corpus_tables), dir);
      std::cout << "wrote " << corpus_tables << " tables to " << dir << "\n";
      return 0;
    }
    const lakeqa::SeedDatabase db = small ? lakeqa::small_seed_database(seed) : lakeqa::desk_seed_database(seed);
    db.save(dir / "seed");
    lakeqa::save_corpus(lakeqa::synthetic_external_pool(seed, external), dir / "external");
    std::cout << "wrote " << db.tables.size() << " seed tables, " << db.questions.size() << " questions and "
              << external << " external tables under " << dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
