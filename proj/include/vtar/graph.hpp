#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "vtar/tensor.hpp"

namespace vtar {

// Reverse-mode tape. Ops append one record per produced tensor; parents always
// precede children because an op's inputs exist before its output is recorded.
// backward() replays records in reverse insertion order. Gradient accumulation
// is additive; callers zero grads between optimization steps. A Graph and the
// tensors recorded on it are confined to one thread.
class Graph {
public:
    struct Record {
        std::vector<Tensor> parents;
        Tensor output;
        std::function<void()> backward;
        const char* op;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    void record(const char* op, std::vector<Tensor> parents, Tensor& output,
                std::function<void()> backward) {
        output.node()->producer = this;
        records_.push_back(Record{std::move(parents), output, std::move(backward), op});
    }

    std::size_t size() const { return records_.size(); }

    void backward(Tensor root) {
        if (!root.valid() || root.size() != 1) {
            throw NumericsError(strf("backward: root must be a scalar tensor, got ",
                                     root.valid() ? shape_str(root.shape()) : "<null>"));
        }
        if (root.node()->producer != this) {
            throw NumericsError("backward: root was not produced on this graph");
        }
        root.grad()[0] += 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            // Records whose output never received gradient contribute nothing.
            if (!it->output.has_grad()) continue;
            it->backward();
        }
    }

    static Graph* active() { return active_; }

    static Graph& active_or_throw(const char* op) {
        if (!active_) {
            throw NumericsError(strf(op, ": input requires grad but no Graph is active"));
        }
        return *active_;
    }

private:
    friend class GraphScope;
    std::vector<Record> records_;
    inline static thread_local Graph* active_ = nullptr;
};

// RAII activation of a graph on the current thread; nestable.
class GraphScope {
public:
    explicit GraphScope(Graph& g) : prev_(Graph::active_) { Graph::active_ = &g; }
    ~GraphScope() { Graph::active_ = prev_; }
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph* prev_;
};

}  // namespace vtar
