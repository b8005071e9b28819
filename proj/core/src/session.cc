#include "dgrpc/session.h"

namespace dgrpc {

const char* to_string(RpcStatus s) {
  switch (s) {
    case RpcStatus::kOk: return "ok";
    case RpcStatus::kNodeFailure: return "node-failure";
    case RpcStatus::kTimeout: return "timeout";
    case RpcStatus::kProtocolError: return "protocol-error";
  }
  return "?";
}

Session::Session(Role role, uint16_t local_num, EndpointAddr remote, uint32_t credits_budget,
                 uint32_t num_slots)
    : state(SessionState::kConnecting),
      credits(credits_budget),
      role_(role),
      local_num_(local_num),
      remote_(remote),
      slots_(num_slots) {
  for (uint32_t i = 0; i < num_slots; i++) {
    slots_[i].session = this;
    slots_[i].index = i;
    slots_[i].cur_req_num = i;
  }
}

SSlot* Session::free_slot() {
  for (SSlot& s : slots_) {
    if (s.state == SlotState::kFree) return &s;
  }
  return nullptr;
}

size_t Session::active_slots() const {
  size_t n = 0;
  for (const SSlot& s : slots_) n += s.state != SlotState::kFree;
  return n;
}

uint32_t Session::slots_in_flight() const {
  uint32_t n = 0;
  for (const SSlot& s : slots_) {
    if (s.state != SlotState::kFree) n += s.client.wire.in_flight();
  }
  return n;
}

bool Session::credits_conserved() const {
  return credits.available() <= credits.budget() && slots_in_flight() == credits.in_flight();
}

void enqueue_backlog(Session& s, PendingRequest req) { s.backlog.push_back(std::move(req)); }

size_t drain_backlog(Session& s, const std::function<void(SSlot&, PendingRequest&&)>& start) {
  size_t n = 0;
  while (!s.backlog.empty()) {
    SSlot* slot = s.free_slot();
    if (slot == nullptr) break;
    PendingRequest req = std::move(s.backlog.front());
    s.backlog.pop_front();
    start(*slot, std::move(req));
    n++;
  }
  return n;
}

}  // namespace dgrpc
