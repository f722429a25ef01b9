#include "t2t/params.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "t2t/error.hpp"
#include "t2t/kernels.hpp"

namespace t2t {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor& ParameterStore::create(const std::string& name, std::vector<std::size_t> shape) {
    return create(name, Tensor(std::move(shape)));
}

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
    require(!has(name), "parameter store: duplicate entry '" + name + "'");
    Entry e;
    e.grad = Tensor(init.shape());
    e.adam.m = Tensor(init.shape());
    e.adam.v = Tensor(init.shape());
    e.value = std::move(init);
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
}

ParameterStore::Entry& ParameterStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "parameter store: unknown entry '" + name + "'");
    return it->second;
}

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "parameter store: unknown entry '" + name + "'");
    return it->second;
}

Tensor& ParameterStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParameterStore::value(const std::string& name) const { return entry(name).value; }
Tensor& ParameterStore::grad(const std::string& name) { return entry(name).grad; }
const Tensor& ParameterStore::grad(const std::string& name) const { return entry(name).grad; }

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.size();
    return n;
}

void ParameterStore::zero_grads() {
    for (auto& [k, e] : entries_) {
        for (double& g : e.grad.values()) g = 0.0;
    }
}

void ParameterStore::adam_step(double lr, double beta1, double beta2, double eps) {
    for (const auto& [k, e] : entries_) {
        require(kernels::all_finite(e.grad.data(), e.grad.size()),
                "adam: non-finite gradient in '" + k + "', step aborted");
    }
    step_ += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& [k, e] : entries_) {
        double* w = e.value.data();
        double* g = e.grad.data();
        double* m = e.adam.m.data();
        double* v = e.adam.v.data();
        const std::size_t n = e.value.size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            g[i] = 0.0;
        }
    }
}

void ParameterStore::gaussian_init(const std::string& name, Rng rng, double stddev) {
    for (double& x : value(name).values()) x = rng.normal(0.0, stddev);
}

namespace {

void write_array(std::string& out, const Tensor& t) {
    out += '[';
    const auto vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) out += ',';
        out += format_double(vals[i]);
    }
    out += ']';
}

void write_shape(std::string& out, const Tensor& t) {
    out += '[';
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
        if (i) out += ',';
        out += std::to_string(t.shape()[i]);
    }
    out += ']';
}

Tensor tensor_from_json(const nlohmann::json& shape_j, const nlohmann::json& data_j) {
    std::vector<std::size_t> shape;
    for (const auto& d : shape_j) shape.push_back(d.get<std::size_t>());
    std::vector<double> data;
    data.reserve(data_j.size());
    for (const auto& v : data_j) data.push_back(v.get<double>());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

std::string ParameterStore::to_json() const {
    // Hand-rolled writer: entry order and number formatting are pinned so
    // identical stores serialize to identical bytes.
    std::string out = "{\"format\":\"t2t-ckpt-v1\",\"params\":{";
    bool first = true;
    for (const auto& [name, e] : entries_) {
        if (!first) out += ',';
        first = false;
        out += '"';
        out += name;
        out += "\":{\"shape\":";
        write_shape(out, e.value);
        out += ",\"data\":";
        write_array(out, e.value);
        out += '}';
    }
    out += "},\"adam\":{";
    first = true;
    for (const auto& [name, e] : entries_) {
        if (!first) out += ',';
        first = false;
        out += '"';
        out += name;
        out += "\":{\"m\":";
        write_array(out, e.adam.m);
        out += ",\"v\":";
        write_array(out, e.adam.v);
        out += '}';
    }
    out += "},\"step\":" + std::to_string(step_) + "}";
    return out;
}

ParameterStore ParameterStore::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("checkpoint: parse error: ") + e.what());
    }
    require(j.is_object() && j.value("format", "") == "t2t-ckpt-v1",
            "checkpoint: missing or unsupported format tag");
    ParameterStore store;
    const auto& params = j.at("params");
    for (auto it = params.begin(); it != params.end(); ++it) {
        store.create(it.key(), tensor_from_json(it.value().at("shape"), it.value().at("data")));
    }
    if (j.contains("adam")) {
        const auto& adam = j.at("adam");
        for (auto it = adam.begin(); it != adam.end(); ++it) {
            Entry& e = store.entry(it.key());
            Tensor m = tensor_from_json(nlohmann::json(e.value.shape()), it.value().at("m"));
            Tensor v = tensor_from_json(nlohmann::json(e.value.shape()), it.value().at("v"));
            require(m.same_shape(e.value) && v.same_shape(e.value),
                    "checkpoint: adam moment shape mismatch for '" + it.key() + "'");
            e.adam.m = std::move(m);
            e.adam.v = std::move(v);
        }
    }
    store.step_ = j.value("step", std::int64_t{0});
    return store;
}

void ParameterStore::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open '" + path + "' for writing");
    const std::string doc = to_json();
    f.write(doc.data(), static_cast<std::streamsize>(doc.size()));
    f.put('\n');
    require(f.good(), "checkpoint: write failed for '" + path + "'");
}

ParameterStore ParameterStore::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

}  // namespace t2t
