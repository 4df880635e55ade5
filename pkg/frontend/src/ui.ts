// DOM rendering: chat bubbles, the connection banner, and the collapsible
// candidate-debug panel (collapsed by default; it is for operators, not
// children). Rendering is a pure function of the view state.

import type { ChatViewState } from './state.js';
import type { ChatController } from './controller.js';

export interface UiElements {
  messages: HTMLElement;
  form: HTMLFormElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  banner: HTMLElement;
  retry: HTMLButtonElement;
  debugBody: HTMLElement;
  status: HTMLElement;
}

export function bindUi(root: Document, controller: ChatController): UiElements {
  const el: UiElements = {
    messages: root.getElementById('messages') as HTMLElement,
    form: root.getElementById('composer') as HTMLFormElement,
    input: root.getElementById('input') as HTMLInputElement,
    send: root.getElementById('send') as HTMLButtonElement,
    banner: root.getElementById('banner') as HTMLElement,
    retry: root.getElementById('retry') as HTMLButtonElement,
    debugBody: root.getElementById('debug-body') as HTMLElement,
    status: root.getElementById('status') as HTMLElement,
  };
  el.form.addEventListener('submit', (ev) => {
    ev.preventDefault();
    const text = el.input.value;
    if (!text.trim()) return;
    el.input.value = '';
    controller.sendMessage(text);
  });
  el.retry.addEventListener('click', () => controller.retry());
  controller.state.subscribe((state) => render(state, el));
  render(controller.state, el);
  return el;
}

export function render(state: ChatViewState, el: UiElements): void {
  renderMessages(state, el.messages);
  renderDebug(state, el.debugBody);

  const enabled = state.inputEnabled;
  el.input.disabled = !enabled;
  el.send.disabled = !enabled;

  el.status.textContent = statusLabel(state);
  el.status.dataset.connection = state.connection;

  if (state.banner) {
    el.banner.hidden = false;
    el.banner.querySelector('.banner-text')!.textContent = state.banner;
  } else {
    el.banner.hidden = true;
  }
}

function statusLabel(state: ChatViewState): string {
  switch (state.connection) {
    case 'open':
      return state.pending ? 'thinking…' : 'ready';
    case 'connecting':
      return 'connecting…';
    case 'reconnecting':
      return 'reconnecting…';
    case 'down':
      return 'offline';
  }
}

function renderMessages(state: ChatViewState, container: HTMLElement): void {
  container.replaceChildren();
  for (const message of state.messages) {
    const bubble = container.ownerDocument.createElement('div');
    bubble.className = `bubble ${message.speaker}`;
    bubble.dataset.index = String(message.index);
    bubble.textContent = message.text;
    container.appendChild(bubble);
  }
  container.scrollTop = container.scrollHeight;
}

function renderDebug(state: ChatViewState, body: HTMLElement): void {
  body.replaceChildren();
  const doc = body.ownerDocument;
  if (state.debug.length === 0) {
    const empty = doc.createElement('p');
    empty.className = 'debug-empty';
    empty.textContent = 'No exchange yet.';
    body.appendChild(empty);
    return;
  }
  for (const candidate of state.debug) {
    const row = doc.createElement('div');
    row.className = candidate.chosen ? 'candidate chosen' : 'candidate';
    const head = doc.createElement('div');
    head.className = 'candidate-head';
    head.textContent =
      `${candidate.source}  total ${candidate.total.toFixed(3)} ` +
      `(q ${candidate.q.toFixed(3)} + boost ${candidate.boost.toFixed(2)} ` +
      `+ certainty ${candidate.certainty.toFixed(2)})`;
    const text = doc.createElement('div');
    text.className = 'candidate-text';
    text.textContent = candidate.text;
    row.append(head, text);
    body.appendChild(row);
  }
}
