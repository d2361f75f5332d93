// Line-oriented scorer for exercising the external protocol. Answers each
// request from an SFT table; misses get neutral scores.
#include <CLI11.hpp>

#include <iostream>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "uavrelay/semantic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Table-backed scorer speaking newline-delimited JSON on stdio"};
  std::string table_path;
  int fault_every = 0;
  long die_after = -1;
  int actions = 0;
  app.add_option("--table", table_path, "SFT dataset (JSONL)")->required();
  app.add_option("--fault-every", fault_every,
                 "Emit a malformed line for every k-th request");
  app.add_option("--die-after", die_after, "Exit after answering this many requests");
  app.add_option("--actions", actions, "Action count for neutral replies");
  CLI11_PARSE(app, argc, argv);

  std::unordered_map<std::string, std::string> table;
  for (const auto& r : uavrelay::load_sft_dataset(table_path)) {
    table.emplace(r.input, r.output);
    if (actions == 0) {
      const auto j = nlohmann::json::parse(r.output, nullptr, false);
      if (j.is_object() && j.contains("scores") && j["scores"].is_string()) {
        actions = static_cast<int>(j["scores"].get<std::string>().size());
      }
    }
  }
  const std::string neutral =
      uavrelay::format_score_output(uavrelay::neutral_scores(actions));

  std::string line;
  long answered = 0;
  while (std::getline(std::cin, line)) {
    if (die_after >= 0 && answered >= die_after) return 1;
    const auto req = nlohmann::json::parse(line, nullptr, false);
    ++answered;
    if (req.is_discarded() || !req.contains("id")) {
      std::cout << "{\"error\":\"bad request\"}\n" << std::flush;
      continue;
    }
    if (fault_every > 0 && answered % fault_every == 0) {
      std::cout << "{\"id\":" << req["id"].dump() << ",\"output\":\n" << std::flush;
      continue;
    }
    const auto it = table.find(req.value("input", std::string()));
    nlohmann::ordered_json resp;
    resp["id"] = req["id"];
    resp["output"] = it == table.end() ? neutral : it->second;
    std::cout << resp.dump() << '\n' << std::flush;
  }
  return 0;
}
