// Boot: resolve the backend base URL (query param beats the page origin,
// so the client can point at any engine), start a session, bind the DOM.

import { ApiClient } from './api.js';
import { ChatController } from './controller.js';
import { bindUi } from './ui.js';

function baseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('backend');
  if (fromQuery) return fromQuery;
  return window.location.origin;
}

const controller = new ChatController(new ApiClient(baseUrl()));
bindUi(document, controller);
void controller.startSession();
