#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "routerank/dcrmodel.hpp"
#include "routerank/featset.hpp"
#include "routerank/roadnet.hpp"
#include "routerank/trajpath.hpp"
#include "routerank/userclust.hpp"

namespace routerank {

using Json = nlohmann::json;

// Config objects. Readers accept partial objects (missing keys keep their
// defaults) and reject unknown keys with SchemaError.
void to_json(Json& j, const DcrConfig& c);
void from_json(const Json& j, DcrConfig& c);
void to_json(Json& j, const FeatureConfig& c);
void from_json(const Json& j, FeatureConfig& c);
void to_json(Json& j, const MapMatchConfig& c);
void from_json(const Json& j, MapMatchConfig& c);
void to_json(Json& j, const KMeansConfig& c);
void from_json(const Json& j, KMeansConfig& c);
void to_json(Json& j, const TsneConfig& c);
void from_json(const Json& j, TsneConfig& c);

/// Throws SchemaError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

// ---------------------------------------------------------------------------
// Network file: one JSON object per line, "kind" is "node" or "link".
//   {"kind":"node","id":0,"x":0.0,"y":0.0}
//   {"kind":"link","id":0,"from":0,"to":1,"length":1500.0,"lanes":2,
//    "road_class":"collector","speed_limit":13.9,"toll":0.0,
//    "light_at_end":false,"geometry":[[x,y],...]}
void write_network(const std::filesystem::path& path, const RoadNetwork& net);
RoadNetwork read_network(const std::filesystem::path& path);

// Terrain file: {"cx":0,"cy":0,"water":false,"green":true,"poi":[8 counts]}
// preceded by a header line {"kind":"grid","cell_size":250.0}.
void write_terrain(const std::filesystem::path& path, double cell_size, std::span<const TerrainCell> cells);
std::vector<TerrainCell> read_terrain(const std::filesystem::path& path, double* cell_size);

// Trajectory file: {"user_id":..,"trip_id":..,"departure_time":"ISO",
// "points":[[t,x,y],...]}
Json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Line-oriented helpers.

/// Reads a JSON Lines file, calling `fn(record, line_number)` per non-empty
/// line. MissingInput when absent; SchemaError on a malformed line.
void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const Json&, std::size_t)>& fn);

/// Reads a whole JSON file.
Json read_json_file(const std::filesystem::path& path);
/// Writes `j` pretty-printed with sorted keys and a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);

/// Numbers formatted with the shortest round-trip representation.
std::string format_double(double v);

/// Wraps json accessors so type/key errors become SchemaError with context.
template <typename T>
T get_field(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(where + ": field '" + key + "': " + ex.what());
  }
}

}  // namespace routerank
