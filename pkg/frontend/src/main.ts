// Browser entry point: connect to the local node and mount the app.

import { ApiSession } from "./session.js";
import { App } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const port = params.get("port") ?? "7677";
const session = new ApiSession(`ws://127.0.0.1:${port}/api`, (url) => new WebSocket(url));
const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
new App(root, session);
session.start();
