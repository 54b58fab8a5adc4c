#pragma once

// HTTP + JSON binding of the session service. Response times travel in
// milliseconds; timestamps are ISO-8601 UTC strings inside the event log.
//
//   POST /sessions                      {"participant","group","order","seed"}
//   GET  /sessions/{id}/next
//   POST /sessions/{id}/answer          {"answer": bool, "rt_ms": number}
//   POST /sessions/{id}/extend-practice
//   POST /sessions/{id}/questionnaire   {"attention": 1..7, "anxiety": 1..7}
//   GET  /sessions/{id}/export
//   GET  /stimulus/fill-fixture?duration_s=20&dt_s=0.1

// Eigen (via the service) must precede httplib: <resolv.h> defines a `_res` macro.
#include "dualrl/session_service.hpp"
#include "dualrl/stimulus.hpp"

#include <httplib.h>
#include <json.hpp>

#include <sstream>
#include <string>

namespace dualrl::session {

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFound& e) {
    send_json(res, 404, {{"schema", kSchemaVersion}, {"error", e.what()}});
  } catch (const Conflict& e) {
    send_json(res, 409, {{"schema", kSchemaVersion}, {"error", e.what()}});
  } catch (const ProtocolError& e) {
    send_json(res, 409, {{"schema", kSchemaVersion}, {"error", e.what()}});
  } catch (const ValidationError& e) {
    send_json(res, 400, {{"schema", kSchemaVersion}, {"error", e.what()}});
  } catch (const json::exception& e) {
    send_json(res, 400, {{"schema", kSchemaVersion}, {"error", std::string("malformed request: ") + e.what()}});
  } catch (const std::invalid_argument& e) {
    send_json(res, 400, {{"schema", kSchemaVersion}, {"error", e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"schema", kSchemaVersion}, {"error", e.what()}});
  }
}

inline json next_json(const NextResult& r) {
  json out = {{"schema", kSchemaVersion}};
  if (const auto* t = std::get_if<TrialStub>(&r)) {
    out["status"] = "trial";
    out["phase"] = to_string(t->phase);
    out["trial_index"] = t->trial_index;
    out["trials_in_phase"] = t->trials_in_phase;
    out["question"] = {{"ab", t->question.ab}, {"cd", t->question.cd}, {"e", t->question.e},
                       {"text", canonical_string(t->question)}};
    out["pressure"] = t->pressure;
  } else if (const auto* w = std::get_if<RestWait>(&r)) {
    out["status"] = "rest";
    out["phase"] = to_string(w->phase);
    out["retry_after_ms"] = w->retry_after_ms;
  } else if (const auto* q = std::get_if<QuestionnaireDue>(&r)) {
    out["status"] = "questionnaire";
    out["phase"] = to_string(q->phase);
  } else {
    out["status"] = "done";
    out["phase"] = "done";
  }
  return out;
}

}  // namespace detail

inline void register_routes(httplib::Server& server, SessionService& service) {
  using detail::guarded;
  using detail::send_json;

  server.Post("/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto id = service.create_session(body.at("participant").get<std::string>(),
                                             group_from_string(body.at("group").get<std::string>()),
                                             order_from_string(body.at("order").get<std::string>()),
                                             body.value("seed", std::uint64_t{0}));
      send_json(res, 201, {{"schema", kSchemaVersion}, {"id", id}, {"phase", to_string(service.phase(id))}});
    });
  });

  server.Get(R"(/sessions/([^/]+)/next)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto r = service.next_trial(req.matches[1]);
      if (const auto* w = std::get_if<RestWait>(&r))
        res.set_header("Retry-After", std::to_string((w->retry_after_ms + 999) / 1000));
      send_json(res, 200, detail::next_json(r));
    });
  });

  server.Post(R"(/sessions/([^/]+)/answer)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto r = service.submit_answer(req.matches[1], body.at("answer").get<bool>(),
                                           body.at("rt_ms").get<double>());
      json out = {{"schema", kSchemaVersion}, {"valid", r.valid}, {"phase", to_string(r.phase_after)}};
      if (r.correct) out["correct"] = *r.correct;
      send_json(res, 200, out);
    });
  });

  server.Post(R"(/sessions/([^/]+)/extend-practice)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      service.extend_practice(req.matches[1]);
      send_json(res, 200, {{"schema", kSchemaVersion}, {"phase", to_string(service.phase(req.matches[1]))}});
    });
  });

  server.Post(R"(/sessions/([^/]+)/questionnaire)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto& a = body.at("attention");
      const auto& x = body.at("anxiety");
      if (!a.is_number_integer() || !x.is_number_integer())
        throw ValidationError("questionnaire scores must be integers");
      const auto phase = service.submit_questionnaire(req.matches[1], a.get<int>(), x.get<int>());
      send_json(res, 200, {{"schema", kSchemaVersion}, {"phase", to_string(phase)}});
    });
  });

  // Fill-unit reference for the browser bar: t,fill_units on a regular grid.
  server.Get("/stimulus/fill-fixture", [](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const double duration = req.has_param("duration_s") ? std::stod(req.get_param_value("duration_s")) : 20.0;
      const double dt = req.has_param("dt_s") ? std::stod(req.get_param_value("dt_s")) : 0.1;
      if (!(duration > 0.0 && duration <= 600.0) || !(dt >= 0.01 && dt <= duration))
        throw ValidationError("duration_s must lie in (0, 600] and dt_s in [0.01, duration_s]");
      std::ostringstream csv;
      write_fill_fixture(csv, duration, dt);
      res.status = 200;
      res.set_content(csv.str(), "text/csv");
    });
  });

  server.Get(R"(/sessions/([^/]+)/export)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.status = 200;
      res.set_content(service.export_session(req.matches[1]), "application/json");
    });
  });
}

}  // namespace dualrl::session
