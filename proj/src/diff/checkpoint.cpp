#include "remap/diff/checkpoint.hpp"

#include <fstream>

#include "remap/common/errors.hpp"
#include "remap/common/hash.hpp"

namespace remap::diff {

std::uint64_t parameter_hash(std::span<const Parameter* const> params) {
    Fnv1a h;
    for (const Parameter* p : params) {
        h.update(p->name);
        h.update(std::span<const std::size_t>(p->tensor.shape));
        h.update(std::span<const double>(p->tensor.values));
    }
    return h.digest();
}

nlohmann::json make_checkpoint(std::string_view kind, nlohmann::json spec,
                               std::span<const Parameter* const> params) {
    nlohmann::json list = nlohmann::json::array();
    for (const Parameter* p : params) {
        list.push_back({{"name", p->name},
                        {"shape", p->tensor.shape},
                        {"trainable", p->trainable},
                        {"values", p->tensor.values}});
    }
    return {{"format", "remap-checkpoint"},
            {"version", 1},
            {"kind", std::string(kind)},
            {"spec", std::move(spec)},
            {"parameters", std::move(list)},
            {"hash", to_hex(parameter_hash(params))}};
}

std::vector<Parameter> read_parameters(const nlohmann::json& checkpoint) {
    if (checkpoint.value("format", "") != "remap-checkpoint") {
        throw InputError("not a remap checkpoint");
    }
    std::vector<Parameter> out;
    for (const auto& entry : checkpoint.at("parameters")) {
        Parameter p;
        p.name = entry.at("name").get<std::string>();
        p.tensor = Tensor::from(entry.at("shape").get<std::vector<std::size_t>>(),
                                entry.at("values").get<std::vector<double>>());
        p.trainable = entry.value("trainable", true);
        out.push_back(std::move(p));
    }
    std::vector<const Parameter*> view;
    for (const auto& p : out) view.push_back(&p);
    const std::string recorded = checkpoint.at("hash").get<std::string>();
    if (to_hex(parameter_hash(view)) != recorded) {
        throw InputError("checkpoint hash mismatch: recorded " + recorded + ", computed " +
                         to_hex(parameter_hash(view)));
    }
    return out;
}

void restore_parameters(const nlohmann::json& checkpoint, std::span<Parameter* const> params) {
    auto stored = read_parameters(checkpoint);
    if (stored.size() != params.size()) {
        throw InputError("checkpoint holds " + std::to_string(stored.size()) +
                         " parameters, destination expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < stored.size(); ++i) {
        if (stored[i].name != params[i]->name || stored[i].tensor.shape != params[i]->tensor.shape) {
            throw InputError("checkpoint parameter '" + stored[i].name + "' " +
                             stored[i].tensor.shape_string() + " does not match '" +
                             params[i]->name + "' " + params[i]->tensor.shape_string());
        }
        params[i]->tensor.values = std::move(stored[i].tensor.values);
        params[i]->trainable = stored[i].trainable;
    }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
    out << doc.dump() << '\n';
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

}  // namespace remap::diff
