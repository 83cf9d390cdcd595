// Entry point. The single piece of configuration is the service base URL:
// ?base=http://host:port overrides the default same-origin value.

import { App } from "./app.js";

function baseUrl(): string {
  const param = new URLSearchParams(window.location.search).get("base");
  if (param) return param;
  return window.location.origin;
}

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
new App(root, baseUrl()).start();
