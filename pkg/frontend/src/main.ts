import { createApp } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
const params = new URLSearchParams(window.location.search);
createApp(root, { baseUrl: params.get("service") ?? "http://127.0.0.1:8000" });
