// Scripted stdio provider for tests. One JSON request per line in, one reply
// per line out.
//
//   fake_provider embed <width>      seq row i is (i+1)/width per entry, one row per token
//   fake_provider caption <fixture>  fixture: JSONL of {video_id, start_ms, end_ms, caption, score, delay_ms}
//   fake_provider score <fixture>    same fixture, replies with the score
//   fake_provider garbage            replies with a non-JSON line
//   fake_provider die                exits on the first request

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include "json.hpp"

using nlohmann::json;

namespace {

std::string key(const json& req) {
  return req.at("video_id").get<std::string>() + ":" + std::to_string(req.at("start_ms").get<long>()) + ":" +
         std::to_string(req.at("end_ms").get<long>());
}

json load(const char* path) {
  std::ifstream in(path);
  json table = json::object();
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) {
      const json rec = json::parse(line);
      table[key(rec)] = rec;
    }
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) return 2;
  const std::string mode = argv[1];
  json table;
  std::size_t width = 0;
  if (mode == "embed") width = std::stoul(argv[2]);
  if (mode == "caption" || mode == "score") table = load(argv[2]);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (mode == "die") return 1;
    if (mode == "garbage") {
      std::cout << "not json" << std::endl;
      continue;
    }
    const json req = json::parse(line);
    json reply;
    if (mode == "embed") {
      std::size_t tokens = 1;
      for (char c : req.at("text").get<std::string>()) tokens += c == ' ';
      reply["seq"] = json::array();
      for (std::size_t i = 0; i < tokens; ++i) reply["seq"].push_back(std::vector<float>(width, float(i + 1) / width));
      reply["global"] = std::vector<float>(width, 0.5f);
    } else if (mode == "caption" || mode == "score") {
      const auto k = key(req);
      const char* field = mode == "caption" ? "caption" : "score";
      if (table.contains(k) && table[k].value("delay_ms", 0) > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(table[k]["delay_ms"].get<int>()));
      if (table.contains(k) && table[k].contains(field))
        reply[field] = table[k][field];
      else
        reply["error"] = std::string("no ") + field + " for " + k;
    } else {
      return 2;
    }
    std::cout << reply.dump() << std::endl;
  }
  return 0;
}
