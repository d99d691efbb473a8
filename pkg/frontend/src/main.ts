import { ApiClient } from "./api.js";
import { DashboardScreen } from "./dashboard.js";
import { DecisionOutbox } from "./outbox.js";
import { ReviewScreen } from "./review.js";
import { SessionsScreen } from "./sessions.js";

function apiOrigin(): string {
  const meta = document.querySelector('meta[name="materia-api-origin"]');
  return meta?.getAttribute("content") ?? "";
}

function route(): void {
  const app = document.getElementById("app");
  if (!app) {
    return;
  }
  const api = new ApiClient(apiOrigin());
  const outbox = new DecisionOutbox(api, window.localStorage);
  app.innerHTML = "";
  const hash = window.location.hash || "#/review";
  document.querySelectorAll("nav a").forEach((link) => {
    link.classList.toggle("active", link.getAttribute("href") === hash);
  });
  if (hash.startsWith("#/sessions")) {
    void new SessionsScreen(app, api).mount();
  } else if (hash.startsWith("#/dashboard")) {
    void new DashboardScreen(app, api).mount();
  } else {
    void new ReviewScreen(app, api, outbox).mount();
  }
}

window.addEventListener("hashchange", route);
window.addEventListener("DOMContentLoaded", () => {
  route();
  // drain any decisions left over from an interrupted session
  const api = new ApiClient(apiOrigin());
  void new DecisionOutbox(api, window.localStorage).flush();
});
